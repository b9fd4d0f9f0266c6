//! Checkpoint files.
//!
//! A checkpoint is UTF-8 text:
//!
//! ```text
//! gpg-checkpoint 1
//! kind gcn
//! nonlinearity tanh
//! taps 1
//! layers 2
//! widths 2 16 16
//! action_dim 2
//! array layer0.tap0 2 16
//! <row 0: 16 values>
//! <row 1: 16 values>
//! array layer0.bias 1 16
//! ...
//! end
//! ```
//!
//! Header lines are `key value...` pairs up to the first `array` line. Each
//! array line names a block and its `rows cols`, followed by that many rows
//! of whitespace-separated values in shortest round-trip exponent form, so a
//! save/load cycle reproduces every bit. Blocks appear in the policy's
//! canonical parameter order. `kind mlp` files carry `robots`, `obs_width`
//! and `action_dim` instead of `taps`; `kind adam` files carry `step` and the
//! `m` and `v` accumulators.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;

use super::{Activation, AdamState, GcnPolicy, GraphFilterLayer, MlpPolicy, Policy};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "gpg-checkpoint";

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Parsed checkpoint container, independent of what it describes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub header: Vec<(String, String)>,
    pub arrays: Vec<Array>,
}

impl Container {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.header.push((key.to_string(), value.to_string()));
    }

    fn push(&mut self, name: impl Into<String>, m: &DMatrix<f64>) {
        let mut data = Vec::with_capacity(m.len());
        super::push_row_major(&mut data, m);
        self.arrays.push(Array {
            name: name.into(),
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        });
    }

    fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.arrays.push(Array {
            name: name.into(),
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {FORMAT_VERSION}\n");
        for (k, v) in &self.header {
            let _ = writeln!(out, "{k} {v}");
        }
        for a in &self.arrays {
            let _ = writeln!(out, "array {} {} {}", a.name, a.rows, a.cols);
            for row in a.data.chunks(a.cols.max(1)) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or("empty file")?;
        let mut words = first.split_whitespace();
        if words.next() != Some(MAGIC) {
            return Err("missing checkpoint magic".into());
        }
        let version: u32 = words
            .next()
            .and_then(|w| w.parse().ok())
            .ok_or("missing format version")?;
        if version != FORMAT_VERSION {
            return Err(format!("unsupported format version {version}"));
        }
        let mut c = Container::default();
        let mut ended = false;
        while let Some((no, line)) = lines.next() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if line == "end" {
                ended = true;
                break;
            }
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if key != "array" {
                if !c.arrays.is_empty() {
                    return Err(format!("line {}: header after arrays", no + 1));
                }
                c.header.push((key.to_string(), rest.trim().to_string()));
                continue;
            }
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, rows, cols] = parts[..] else {
                return Err(format!("line {}: expected `array name rows cols`", no + 1));
            };
            let rows: usize = rows.parse().map_err(|_| format!("line {}: bad row count", no + 1))?;
            let cols: usize = cols.parse().map_err(|_| format!("line {}: bad column count", no + 1))?;
            let mut data = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (no, row) = lines.next().ok_or_else(|| format!("array {name} truncated"))?;
                let before = data.len();
                for w in row.split_whitespace() {
                    data.push(w.parse::<f64>().map_err(|_| format!("line {}: bad value `{w}`", no + 1))?);
                }
                if data.len() - before != cols {
                    return Err(format!("line {}: expected {cols} values", no + 1));
                }
            }
            c.arrays.push(Array {
                name: name.to_string(),
                rows,
                cols,
                data,
            });
        }
        if !ended {
            return Err("missing `end` marker".into());
        }
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::parse(&text).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    fn flat(&self) -> Vec<f64> {
        self.arrays.iter().flat_map(|a| a.data.iter().copied()).collect()
    }

    fn shapes(&self) -> Vec<(String, usize, usize)> {
        self.arrays.iter().map(|a| (a.name.clone(), a.rows, a.cols)).collect()
    }
}

fn field<T: std::str::FromStr>(c: &Container, key: &str) -> std::result::Result<T, String> {
    c.get(key)
        .ok_or_else(|| format!("missing header `{key}`"))?
        .parse()
        .map_err(|_| format!("bad header `{key}`"))
}

fn list(c: &Container, key: &str) -> std::result::Result<Vec<usize>, String> {
    c.get(key)
        .ok_or_else(|| format!("missing header `{key}`"))?
        .split_whitespace()
        .map(|w| w.parse().map_err(|_| format!("bad header `{key}`")))
        .collect()
}

fn shape_diff(expected: &[(String, usize, usize)], found: &[(String, usize, usize)]) -> String {
    for (e, f) in expected.iter().zip(found) {
        if e != f {
            return format!("block {} is {}x{}, policy expects {} {}x{}", f.0, f.1, f.2, e.0, e.1, e.2);
        }
    }
    format!("{} blocks in file, policy expects {}", found.len(), expected.len())
}

impl GcnPolicy {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.set("kind", "gcn");
        c.set("nonlinearity", self.activation.tag());
        c.set("taps", self.taps());
        c.set("layers", self.layers.len());
        let widths: Vec<String> = self.widths().iter().map(|w| w.to_string()).collect();
        c.set("widths", widths.join(" "));
        c.set("action_dim", self.action_dim());
        for (l, layer) in self.layers.iter().enumerate() {
            for (k, t) in layer.taps.iter().enumerate() {
                c.push(format!("layer{l}.tap{k}"), t);
            }
            c.push_vec(format!("layer{l}.bias"), &layer.bias);
        }
        c.push("head.weight", &self.head_weight);
        c.push_vec("head.bias", &self.head_bias);
        c.push_vec("log_sigma", &self.log_sigma);
        c
    }

    pub fn from_container(c: &Container) -> std::result::Result<Self, String> {
        if c.get("kind") != Some("gcn") {
            return Err(format!("expected kind gcn, found {:?}", c.get("kind")));
        }
        let activation = c
            .get("nonlinearity")
            .and_then(Activation::from_tag)
            .ok_or("unknown nonlinearity")?;
        let taps: usize = field(c, "taps")?;
        let num_layers: usize = field(c, "layers")?;
        let widths = list(c, "widths")?;
        let action_dim: usize = field(c, "action_dim")?;
        if num_layers == 0 || widths.len() != num_layers + 1 {
            return Err(format!("{} widths for {num_layers} layers", widths.len()));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            layers.push(GraphFilterLayer {
                taps: vec![DMatrix::zeros(widths[l], widths[l + 1]); taps + 1],
                bias: vec![0.0; widths[l + 1]],
            });
        }
        let mut p = GcnPolicy {
            layers,
            head_weight: DMatrix::zeros(widths[num_layers], action_dim),
            head_bias: vec![0.0; action_dim],
            log_sigma: vec![0.0; action_dim],
            activation,
        };
        let expected = p.param_shapes();
        if expected != c.shapes() {
            return Err(shape_diff(&expected, &c.shapes()));
        }
        p.set_params(&c.flat()).map_err(|e| e.to_string())?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        Self::from_container(&c).map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }

    /// Loads parameters into an existing architecture, refusing files whose
    /// blocks do not line up with it.
    pub fn load_into(&mut self, path: &Path) -> Result<()> {
        let loaded = Self::load(path)?;
        let (expected, found) = (self.param_shapes(), loaded.param_shapes());
        if expected != found || loaded.activation != self.activation {
            return Err(Error::Incompatible(format!(
                "{}: {}",
                path.display(),
                if expected != found {
                    shape_diff(&expected, &found)
                } else {
                    format!("nonlinearity {} vs {}", loaded.activation.tag(), self.activation.tag())
                }
            )));
        }
        *self = loaded;
        Ok(())
    }
}

impl MlpPolicy {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.set("kind", "mlp");
        c.set("nonlinearity", self.activation.tag());
        c.set("robots", self.num_robots());
        c.set("obs_width", self.obs_width());
        c.set("action_dim", self.action_dim());
        let hidden: Vec<String> = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|(w, _)| w.ncols().to_string())
            .collect();
        c.set("hidden", hidden.join(" "));
        for (l, (w, b)) in self.layers.iter().enumerate() {
            c.push(format!("layer{l}.weight"), w);
            c.push_vec(format!("layer{l}.bias"), b);
        }
        c.push_vec("log_sigma", &self.log_sigma);
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let build = || -> std::result::Result<Self, String> {
            if c.get("kind") != Some("mlp") {
                return Err(format!("expected kind mlp, found {:?}", c.get("kind")));
            }
            let cfg = super::MlpConfig {
                hidden: list(&c, "hidden")?,
                action_dim: field(&c, "action_dim")?,
                init_log_sigma: 0.0,
                activation: c
                    .get("nonlinearity")
                    .and_then(Activation::from_tag)
                    .ok_or("unknown nonlinearity")?,
            };
            let robots: usize = field(&c, "robots")?;
            let obs: usize = field(&c, "obs_width")?;
            let mut rng = rand::rngs::mock::StepRng::new(0, 0);
            let mut p = MlpPolicy::new(robots, obs, &cfg, &mut rng).map_err(|e| e.to_string())?;
            p.set_params(&c.flat()).map_err(|e| e.to_string())?;
            Ok(p)
        };
        build().map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}

impl AdamState {
    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.set("kind", "adam");
        c.set("step", self.step);
        c.push_vec("m", &self.m);
        c.push_vec("v", &self.v);
        c
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = Container::read(path)?;
        let build = || -> std::result::Result<Self, String> {
            if c.get("kind") != Some("adam") {
                return Err("expected kind adam".into());
            }
            let step = field(&c, "step")?;
            let find = |name: &str| {
                c.arrays
                    .iter()
                    .find(|a| a.name == name)
                    .map(|a| a.data.clone())
                    .ok_or_else(|| format!("missing array {name}"))
            };
            let (m, v) = (find("m")?, find("v")?);
            if m.len() != v.len() {
                return Err("moment arrays differ in length".into());
            }
            Ok(AdamState { m, v, step })
        };
        build().map_err(|reason| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        })
    }
}
