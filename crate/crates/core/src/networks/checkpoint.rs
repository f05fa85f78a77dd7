//! Plain-text checkpoint files.
//!
//! Floats are written in Rust's shortest round-trip exponent form, so a
//! save/load cycle reproduces every parameter bit for bit.
//!
//! ```text
//! missbgm-checkpoint 1
//! meta <key> <value>
//! network <name> <n_layers>
//! layer dense <activation>
//! <rows> <cols> <values...>            (weight)
//! <rows> <cols> <values...>            (bias)
//! layer variational <activation> <prior_scale>
//! ... four tensors: weight mean, weight raw scale, bias mean, bias raw scale
//! tensor <name>
//! <rows> <cols> <values...>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::layers::{Activation, DenseLayer, Layer, VariationalDense};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const MAGIC: &str = "missbgm-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub networks: BTreeMap<String, Vec<Layer>>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Checkpoint {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(MAGIC);
        out.push('\n');
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, layers) in &self.networks {
            let _ = writeln!(out, "network {name} {}", layers.len());
            for layer in layers {
                match layer {
                    Layer::Dense(l) => {
                        let _ = writeln!(out, "layer dense {}", l.activation.name());
                    }
                    Layer::Variational(l) => {
                        let _ = writeln!(
                            out,
                            "layer variational {} {:e}",
                            l.activation.name(),
                            l.prior_scale
                        );
                    }
                }
                for t in layer.params() {
                    write_tensor(&mut out, t);
                }
            }
        }
        for (name, t) in &self.tensors {
            let _ = writeln!(out, "tensor {name}");
            write_tensor(&mut out, t);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().peekable();
        match lines.next() {
            Some((_, l)) if l.trim() == MAGIC => {}
            _ => return Err(Error::Data("not a checkpoint file (bad header)".into())),
        }
        let mut ckpt = Checkpoint::default();
        let next_tensor = |lines: &mut dyn Iterator<Item = (usize, &str)>| -> Result<Tensor> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| Error::Data("checkpoint ends inside a tensor".into()))?;
            parse_tensor(line).map_err(|m| Error::Data(format!("checkpoint line {}: {m}", no + 1)))
        };
        while let Some((no, line)) = lines.next() {
            let bad = |m: &str| Error::Data(format!("checkpoint line {}: {m}", no + 1));
            if line.trim().is_empty() {
                continue;
            }
            let mut words = line.splitn(3, ' ');
            match words.next() {
                Some("meta") => {
                    let key = words.next().ok_or_else(|| bad("meta without key"))?;
                    let value = words.next().unwrap_or("");
                    ckpt.meta.insert(key.to_string(), value.to_string());
                }
                Some("network") => {
                    let name = words.next().ok_or_else(|| bad("network without name"))?;
                    let count: usize = words
                        .next()
                        .and_then(|c| c.trim().parse().ok())
                        .ok_or_else(|| bad("network without layer count"))?;
                    let mut layers = Vec::with_capacity(count);
                    for _ in 0..count {
                        let (lno, header) =
                            lines.next().ok_or_else(|| bad("checkpoint ends inside a network"))?;
                        let lbad = |m: &str| Error::Data(format!("checkpoint line {}: {m}", lno + 1));
                        let parts: Vec<&str> = header.split_whitespace().collect();
                        let act = parts
                            .get(2)
                            .and_then(|a| Activation::parse(a))
                            .ok_or_else(|| lbad("unknown activation"))?;
                        let layer = match parts.get(..2) {
                            Some(["layer", "dense"]) => {
                                let weight = next_tensor(&mut lines)?;
                                let bias = next_tensor(&mut lines)?;
                                Layer::Dense(DenseLayer {
                                    weight,
                                    bias,
                                    activation: act,
                                })
                            }
                            Some(["layer", "variational"]) => {
                                let prior_scale: f64 = parts
                                    .get(3)
                                    .and_then(|s| s.parse().ok())
                                    .ok_or_else(|| lbad("missing prior scale"))?;
                                Layer::Variational(VariationalDense {
                                    weight_mean: next_tensor(&mut lines)?,
                                    weight_raw_scale: next_tensor(&mut lines)?,
                                    bias_mean: next_tensor(&mut lines)?,
                                    bias_raw_scale: next_tensor(&mut lines)?,
                                    prior_scale,
                                    activation: act,
                                })
                            }
                            _ => return Err(lbad("expected a layer header")),
                        };
                        check_layer(&layer).map_err(|m| lbad(&m))?;
                        layers.push(layer);
                    }
                    ckpt.networks.insert(name.to_string(), layers);
                }
                Some("tensor") => {
                    let name = words.next().ok_or_else(|| bad("tensor without name"))?;
                    let t = next_tensor(&mut lines)?;
                    ckpt.tensors.insert(name.trim().to_string(), t);
                }
                _ => return Err(bad("unrecognized record")),
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn network(&self, name: &str) -> Result<Vec<Layer>> {
        self.networks
            .get(name)
            .cloned()
            .ok_or_else(|| Error::Data(format!("checkpoint has no network `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("checkpoint has no tensor `{name}`")))
    }

    pub fn meta_value(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Data(format!("checkpoint has no meta entry `{key}`")))
    }
}

fn write_tensor(out: &mut String, t: &Tensor) {
    let _ = write!(out, "{} {}", t.rows(), t.cols());
    for v in t.data() {
        let _ = write!(out, " {v:e}");
    }
    out.push('\n');
}

fn parse_tensor(line: &str) -> std::result::Result<Tensor, String> {
    let mut it = line.split_whitespace();
    let mut dim = || -> std::result::Result<usize, String> {
        it.next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "bad tensor dimensions".to_string())
    };
    let (r, c) = (dim()?, dim()?);
    let data = it
        .map(|s| s.parse::<f64>().map_err(|_| format!("bad number `{s}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Tensor::new(r, c, data).map_err(|e| e.to_string())
}

fn check_layer(layer: &Layer) -> std::result::Result<(), String> {
    let p = layer.params();
    let [i, o] = p[0].shape();
    let ok = match layer {
        Layer::Dense(_) => p[1].shape() == [1, o],
        Layer::Variational(_) => {
            p[1].shape() == [i, o] && p[2].shape() == [1, o] && p[3].shape() == [1, o]
        }
    };
    if ok {
        Ok(())
    } else {
        Err("inconsistent layer tensor shapes".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::networks::{FeedForward, GeneratorNet, DEFAULT_VAR_FLOOR};
    use crate::rng::Rng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = Rng::seed_from_u64(1);
        let g = GeneratorNet::new(3, 5, &[7, 7], None, DEFAULT_VAR_FLOOR, &mut rng);
        let m = FeedForward::new(5, &[4], 5, Some(0.7), &mut rng);
        let mut ckpt = Checkpoint::default();
        ckpt.networks.insert("generator".into(), g.to_layers());
        ckpt.networks.insert("missingness".into(), m.to_layers());
        ckpt.meta.insert("note".into(), "two words".into());
        ckpt.tensors.insert(
            "z".into(),
            Tensor::from_fn(2, 3, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.3) / 3.0),
        );
        ckpt.tensors.insert("empty".into(), Tensor::zeros(4, 0));
        let back = Checkpoint::from_text(&ckpt.to_text()).unwrap();
        assert_eq!(back, ckpt);
        let g2 = GeneratorNet::from_layers(back.network("generator").unwrap(), DEFAULT_VAR_FLOOR)
            .unwrap();
        assert_eq!(g2, g);
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_text("hello").is_err());
        let text = format!("{MAGIC}\nnetwork g 1\nlayer dense identity\n2 2 1 2 3\n");
        assert!(Checkpoint::from_text(&text).is_err());
    }
}
