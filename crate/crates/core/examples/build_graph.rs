//! Builds communication graphs over a random swarm and inspects the
//! normalized Laplacian used as the graph shift operator.
//!
//! cargo run --example build_graph -- [n_robots] [k]

use gpg::graph::{build_epsilon_graph, build_knn_graph, normalized_laplacian, permute_graph, Permutation, Point};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gpg::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let k: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(2);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<Point> = (0..n).map(|_| [rng.gen_range(0.0..4.0), rng.gen_range(0.0..4.0)]).collect();

    let knn = build_knn_graph(&pts, k)?;
    println!("{k}-nearest-neighbor graph: {} edges, degrees {:?}", knn.num_edges(), knn.degrees());
    print!("{}", knn.to_edge_list());

    let disk = build_epsilon_graph(&pts, 1.5)?;
    println!("disk graph (radius 1.5): {} edges, degrees {:?}", disk.num_edges(), disk.degrees());

    let s = normalized_laplacian(&knn);
    println!("S = I - D^-1/2 A D^-1/2:{:.3}", s.matrix());

    // relabeling the robots relabels S the same way
    let p = Permutation::random(n, &mut rng);
    let relabeled = normalized_laplacian(&knn.permuted(&p)?);
    let err = (relabeled.matrix() - permute_graph(&s, &p)?.matrix()).amax();
    println!("max |S(PG) - P S Pᵀ| = {err:.1e}");
    Ok(())
}
