use super::config::TrainConfig;
use super::fit::{Model, TrainState};
use crate::autodiff::Tensor;
use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::networks::{Checkpoint, FeedForward, GeneratorNet};

/// Latents, completed table and mask at the end of training, in
/// standardized units.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    pub z: Tensor,
    pub x: Tensor,
    pub mask: Tensor,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        for (k, v) in self.config.pairs() {
            ck.meta.insert(k, v);
        }
        ck.networks.insert("generator".into(), self.generator.to_layers());
        ck.networks.insert("missingness".into(), self.missingness.to_layers());
        if let Some(s) = &self.scaler {
            ck.tensors.insert("scaler.mean".into(), Tensor::row_vector(s.mean.clone()));
            ck.tensors.insert("scaler.std".into(), Tensor::row_vector(s.std.clone()));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut config = TrainConfig::default();
        for (k, v) in &ck.meta {
            if !config.set(k, v)? {
                return Err(Error::Data(format!("checkpoint has unknown meta key `{k}`")));
            }
        }
        let generator = GeneratorNet::from_layers(ck.network("generator")?, config.var_floor)?;
        let missingness = FeedForward::from_layers(ck.network("missingness")?)?;
        if generator.z_dim() != config.z_dim || missingness.input_dim() != generator.output_dim() {
            return Err(Error::Data("checkpoint networks disagree with its configuration".into()));
        }
        let scaler = match (ck.tensors.get("scaler.mean"), ck.tensors.get("scaler.std")) {
            (Some(m), Some(s)) => Some(Scaler {
                mean: m.data().to_vec(),
                std: s.data().to_vec(),
            }),
            (None, None) => None,
            _ => return Err(Error::Data("checkpoint has half a scaler".into())),
        };
        Ok(Self {
            generator,
            missingness,
            config,
            scaler,
        })
    }
}

impl TrainState {
    /// Model plus the terminal latents, completed table and mask.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.model.to_checkpoint();
        ck.tensors.insert("state.z".into(), self.z.clone());
        ck.tensors.insert("state.x".into(), self.x.clone());
        ck.tensors.insert("state.mask".into(), self.mask.clone());
        ck
    }

    pub fn terminal(&self) -> Terminal {
        Terminal {
            z: self.z.clone(),
            x: self.x.clone(),
            mask: self.mask.clone(),
        }
    }
}

/// Terminal state stored alongside the model, if any.
pub fn terminal_from_checkpoint(ck: &Checkpoint) -> Result<Option<Terminal>> {
    match (ck.tensors.get("state.z"), ck.tensors.get("state.x"), ck.tensors.get("state.mask")) {
        (Some(z), Some(x), Some(mask)) => Ok(Some(Terminal {
            z: z.clone(),
            x: x.clone(),
            mask: mask.clone(),
        })),
        (None, None, None) => Ok(None),
        _ => Err(Error::Data("checkpoint has an incomplete terminal state".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::fit;

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let (raw, _) = crate::data::simulate_oracle(40, 7, 0.3, 2).unwrap();
        let (xs, sc) = crate::data::standardize(&raw.x_obs).unwrap();
        let mut ds = crate::data::Dataset::new(xs, raw.mask.clone(), None).unwrap();
        ds.scaler = Some(sc);
        let mut cfg = TrainConfig::default();
        cfg.epochs = 1;
        cfg.g_units = vec![8];
        cfg.missingness_units = vec![4];
        cfg.egm_init.enabled = false;
        cfg.use_bnn = true;
        let st = fit(&ds, &cfg).unwrap();
        let text = st.to_checkpoint().to_text();
        let ck = Checkpoint::from_text(&text).unwrap();
        let model = Model::from_checkpoint(&ck).unwrap();
        assert_eq!(model, st.model);
        assert_eq!(terminal_from_checkpoint(&ck).unwrap().unwrap(), st.terminal());
        assert_eq!(ck.to_text(), text);
    }
}
