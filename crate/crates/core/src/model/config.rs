use crate::config::KeyValues;
use crate::error::{Error, Result};

/// Network dimensions. Defaults are desk scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub encoder_layers: usize,
    pub encoder_hidden: usize,
    pub encoder_proj: usize,
    pub attention_dim: usize,
    pub attention_channels: usize,
    pub attention_width: usize,
    pub decoder_hidden: usize,
    pub embed_dim: usize,
    pub ctc_hidden: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 37,
            encoder_layers: 2,
            encoder_hidden: 32,
            encoder_proj: 32,
            attention_dim: 32,
            attention_channels: 10,
            attention_width: 5,
            decoder_hidden: 32,
            embed_dim: 16,
            ctc_hidden: 32,
            init_scale: 0.3,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("encoder_layers", self.encoder_layers),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_proj", self.encoder_proj),
            ("attention_dim", self.attention_dim),
            ("attention_channels", self.attention_channels),
            ("attention_width", self.attention_width),
            ("decoder_hidden", self.decoder_hidden),
            ("embed_dim", self.embed_dim),
            ("ctc_hidden", self.ctc_hidden),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.init_scale >= 0.0) {
            return Err(Error::Config("init_scale must be non-negative".into()));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("input_dim", self.input_dim);
        kv.set("encoder_layers", self.encoder_layers);
        kv.set("encoder_hidden", self.encoder_hidden);
        kv.set("encoder_proj", self.encoder_proj);
        kv.set("attention_dim", self.attention_dim);
        kv.set("attention_channels", self.attention_channels);
        kv.set("attention_width", self.attention_width);
        kv.set("decoder_hidden", self.decoder_hidden);
        kv.set("embed_dim", self.embed_dim);
        kv.set("ctc_hidden", self.ctc_hidden);
        kv.set("init_scale", format!("{:?}", self.init_scale));
        kv.set("seed", self.seed);
        kv
    }

    /// Reads any keys present, keeping defaults for the rest.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = ModelConfig::default();
        let cfg = ModelConfig {
            input_dim: kv.get_or("input_dim", d.input_dim)?,
            encoder_layers: kv.get_or("encoder_layers", d.encoder_layers)?,
            encoder_hidden: kv.get_or("encoder_hidden", d.encoder_hidden)?,
            encoder_proj: kv.get_or("encoder_proj", d.encoder_proj)?,
            attention_dim: kv.get_or("attention_dim", d.attention_dim)?,
            attention_channels: kv.get_or("attention_channels", d.attention_channels)?,
            attention_width: kv.get_or("attention_width", d.attention_width)?,
            decoder_hidden: kv.get_or("decoder_hidden", d.decoder_hidden)?,
            embed_dim: kv.get_or("embed_dim", d.embed_dim)?,
            ctc_hidden: kv.get_or("ctc_hidden", d.ctc_hidden)?,
            init_scale: kv.get_or("init_scale", d.init_scale)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_value_round_trip() {
        let cfg = ModelConfig {
            input_dim: 30,
            init_scale: 0.07,
            seed: 99,
            ..Default::default()
        };
        let back = ModelConfig::from_key_values(&cfg.to_key_values()).unwrap();
        assert_eq!(cfg, back);
    }
}
