//! Spawn and goal generators.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{distance, Point};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpawnGenerator {
    /// Uniform in `[0, width] x [0, height]`.
    Rectangle { width: f64, height: f64 },
    /// Along the x axis, `spacing` apart, starting at the origin.
    Line { spacing: f64 },
    /// Evenly spaced on a circle centred at the origin.
    Circle { radius: f64 },
}

impl Default for SpawnGenerator {
    fn default() -> Self {
        SpawnGenerator::Rectangle { width: 3.0, height: 3.0 }
    }
}

impl SpawnGenerator {
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        match *self {
            SpawnGenerator::Rectangle { width, height } => (0..n)
                .map(|_| [width * rng.gen::<f64>(), height * rng.gen::<f64>()])
                .collect(),
            SpawnGenerator::Line { spacing } => (0..n).map(|i| [i as f64 * spacing, 0.0]).collect(),
            SpawnGenerator::Circle { radius } => (0..n)
                .map(|i| {
                    let th = 2.0 * PI * i as f64 / n as f64;
                    [radius * th.cos(), radius * th.sin()]
                })
                .collect(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, SpawnGenerator::Rectangle { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GoalGenerator {
    /// Each goal is its robot's spawn plus a uniform draw from the disk of
    /// radius `max_distance`; goals are then matched greedily to robots.
    Offset { max_distance: f64 },
    /// Every goal is its spawn shifted by the same vector.
    Translate { dx: f64, dy: f64 },
}

impl Default for GoalGenerator {
    fn default() -> Self {
        GoalGenerator::Offset { max_distance: 3.0 }
    }
}

impl GoalGenerator {
    pub fn sample<R: Rng + ?Sized>(&self, spawns: &[Point], rng: &mut R) -> Vec<Point> {
        match *self {
            GoalGenerator::Offset { max_distance } => {
                let raw: Vec<Point> = spawns
                    .iter()
                    .map(|p| {
                        let r = max_distance * rng.gen::<f64>().sqrt();
                        let th = 2.0 * PI * rng.gen::<f64>();
                        [p[0] + r * th.cos(), p[1] + r * th.sin()]
                    })
                    .collect();
                goal_assignment(spawns, &raw)
            }
            GoalGenerator::Translate { dx, dy } => spawns.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, GoalGenerator::Offset { .. })
    }
}

/// Greedy matching: robots in index order each take the nearest goal not yet
/// taken, ties going to the lower goal index. Returns goals reordered so that
/// entry `i` belongs to robot `i`.
pub fn goal_assignment(spawns: &[Point], goals: &[Point]) -> Vec<Point> {
    assert_eq!(spawns.len(), goals.len(), "goal assignment needs one goal per robot");
    let mut taken = vec![false; goals.len()];
    spawns
        .iter()
        .map(|&p| {
            let mut best: Option<(f64, usize)> = None;
            for (j, &g) in goals.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let d = distance(p, g);
                if best.map_or(true, |(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
            let (_, j) = best.expect("one free goal per remaining robot");
            taken[j] = true;
            goals[j]
        })
        .collect()
}

pub fn min_pairwise_distance(points: &[Point]) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            best = best.min(distance(points[i], points[j]));
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_when_goals_are_spawns() {
        let pts = vec![[0.0, 0.0], [2.0, 1.0], [-1.0, 4.0]];
        assert_eq!(goal_assignment(&pts, &pts), pts);
    }

    #[test]
    fn crossed_goals_resolved_by_robot_order() {
        // robot 0 at origin, robot 1 at (1,0); goals listed crossed.
        // robot 0 is closest to (0.4,0) (d 0.4) over (1.2,0) (d 1.2)
        let spawns = vec![[0.0, 0.0], [1.0, 0.0]];
        let goals = vec![[1.2, 0.0], [0.4, 0.0]];
        assert_eq!(goal_assignment(&spawns, &goals), vec![[0.4, 0.0], [1.2, 0.0]]);
        // robot 0 grabs the goal robot 1 would prefer; enumeration of the
        // greedy order by hand
        let spawns = vec![[0.0, 0.0], [1.0, 0.0]];
        let goals = vec![[3.0, 0.0], [0.9, 0.0]];
        assert_eq!(goal_assignment(&spawns, &goals), vec![[0.9, 0.0], [3.0, 0.0]]);
    }

    #[test]
    fn assignment_is_a_bijection() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let spawns: Vec<Point> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
            let goals: Vec<Point> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
            let out = goal_assignment(&spawns, &goals);
            let mut used = vec![false; n];
            for g in &out {
                let j = goals.iter().position(|h| h == g).unwrap();
                assert!(!used[j]);
                used[j] = true;
            }
        }
    }

    #[test]
    fn generators() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let line = SpawnGenerator::Line { spacing: 1.5 }.sample(3, &mut rng);
        assert_eq!(line, vec![[0.0, 0.0], [1.5, 0.0], [3.0, 0.0]]);
        let circle = SpawnGenerator::Circle { radius: 2.0 }.sample(4, &mut rng);
        for p in &circle {
            assert!((p[0].hypot(p[1]) - 2.0).abs() < 1e-12);
        }
        let rect = SpawnGenerator::Rectangle { width: 2.0, height: 1.0 }.sample(50, &mut rng);
        assert!(rect.iter().all(|p| (0.0..=2.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1])));
        let goals = GoalGenerator::Offset { max_distance: 3.0 }.sample(&rect, &mut rng);
        assert_eq!(goals.len(), 50);
        let shifted = GoalGenerator::Translate { dx: 0.0, dy: 20.0 }.sample(&line, &mut rng);
        assert_eq!(shifted[2], [3.0, 20.0]);
    }
}
