use std::fmt;
use std::str::FromStr;

use roadforge_core::kv::KvMap;
use serde::{Deserialize, Serialize};

use crate::ModelError;

/// Flattened 30x30 output of the image encoder.
pub const ENCODER_OUT: usize = 900;
pub const IMAGE_SIDE: usize = 64;
/// Hidden width of the context-attention MLP.
pub const CA_HIDDEN: usize = 1800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GgtConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub mlp_inner: usize,
    pub head_hidden: usize,
    /// Frontier size M; the adjacency head has M + 1 outputs (last = stop).
    pub frontier: usize,
    pub context_attention: bool,
    pub exclude_self_attention: bool,
}

impl Default for GgtConfig {
    fn default() -> Self {
        Self {
            layers: 12,
            d_model: 256,
            heads: 8,
            mlp_inner: 2048,
            head_hidden: 128,
            frontier: 4,
            context_attention: true,
            exclude_self_attention: false,
        }
    }
}

impl GgtConfig {
    /// Four blocks of width 64; small enough to train on one core.
    pub fn desk(frontier: usize) -> Self {
        Self { layers: 4, d_model: 64, heads: 4, mlp_inner: 256, frontier, ..Self::default() }
    }

    /// The gradient-check configuration.
    pub fn tiny(frontier: usize) -> Self {
        Self { layers: 2, d_model: 16, heads: 2, mlp_inner: 64, frontier, ..Self::default() }
    }

    /// Width of one decoder input row: previous adjacency, previous coords, image code.
    pub fn input_width(&self) -> usize {
        self.frontier + 1 + 2 + ENCODER_OUT
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.layers, self.d_model, self.heads, self.mlp_inner, self.head_hidden, self.frontier];
        if dims.contains(&0) {
            return Err(ModelError::Config("all model dimensions must be positive".into()));
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return Err(ModelError::Config(format!("d_model {} is not divisible by heads {}", self.d_model, self.heads)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ggt,
    GgtNoCa,
    Mlp,
    Rnn,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Ggt, ModelKind::GgtNoCa, ModelKind::Mlp, ModelKind::Rnn];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ggt => "ggt",
            ModelKind::GgtNoCa => "ggt_no_ca",
            ModelKind::Mlp => "mlp",
            ModelKind::Rnn => "rnn",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown model kind `{s}` (ggt, ggt_no_ca, mlp, rnn)")))
    }
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Decoder settings; `frontier` and `head_hidden` also apply to the GRU.
    pub ggt: GgtConfig,
    pub mlp_hidden: usize,
    /// Node slots of the one-shot MLP baseline.
    pub n_max: usize,
    pub rnn_hidden: usize,
    /// Initialization seed.
    pub seed: u64,
}

impl ModelConfig {
    pub const KEYS: &'static [&'static str] = &[
        "kind",
        "layers",
        "d_model",
        "heads",
        "mlp_inner",
        "head_hidden",
        "frontier",
        "exclude_self_attention",
        "mlp_hidden",
        "n_max",
        "rnn_hidden",
        "init_seed",
    ];

    pub fn new(kind: ModelKind, ggt: GgtConfig) -> Self {
        let ggt = GgtConfig { context_attention: kind != ModelKind::GgtNoCa, ..ggt };
        Self { kind, ggt, mlp_hidden: 1600, n_max: 10, rnn_hidden: 256, seed: 0 }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn frontier(&self) -> usize {
        self.ggt.frontier
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.ggt.validate()?;
        if self.ggt.context_attention != (self.kind != ModelKind::GgtNoCa) {
            return Err(ModelError::Config("context_attention must be off exactly for ggt_no_ca".into()));
        }
        if self.mlp_hidden == 0 || self.n_max < 2 || self.rnn_hidden == 0 {
            return Err(ModelError::Config("baseline dimensions must be positive and n_max >= 2".into()));
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("kind", self.kind);
        kv.insert("layers", self.ggt.layers);
        kv.insert("d_model", self.ggt.d_model);
        kv.insert("heads", self.ggt.heads);
        kv.insert("mlp_inner", self.ggt.mlp_inner);
        kv.insert("head_hidden", self.ggt.head_hidden);
        kv.insert("frontier", self.ggt.frontier);
        kv.insert("exclude_self_attention", self.ggt.exclude_self_attention);
        kv.insert("mlp_hidden", self.mlp_hidden);
        kv.insert("n_max", self.n_max);
        kv.insert("rnn_hidden", self.rnn_hidden);
        kv.insert("init_seed", self.seed);
        kv
    }

    /// Overrides `base` with the keys present in `kv`.
    pub fn from_kv(kv: &KvMap, base: ModelConfig) -> Result<Self, ModelError> {
        let cfg_err = |e: roadforge_core::kv::KvError| ModelError::Config(e.to_string());
        let mut c = base;
        if let Some(k) = kv.get("kind") {
            c.kind = k.parse()?;
        }
        macro_rules! read {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.parse_value($key).map_err(cfg_err)? {
                    $field = v;
                }
            };
        }
        read!("layers", c.ggt.layers);
        read!("d_model", c.ggt.d_model);
        read!("heads", c.ggt.heads);
        read!("mlp_inner", c.ggt.mlp_inner);
        read!("head_hidden", c.ggt.head_hidden);
        read!("frontier", c.ggt.frontier);
        read!("exclude_self_attention", c.ggt.exclude_self_attention);
        read!("mlp_hidden", c.mlp_hidden);
        read!("n_max", c.n_max);
        read!("rnn_hidden", c.rnn_hidden);
        read!("init_seed", c.seed);
        c.ggt.context_attention = c.kind != ModelKind::GgtNoCa;
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_validation() {
        let g = GgtConfig::default();
        assert_eq!((g.layers, g.d_model, g.heads, g.mlp_inner, g.head_hidden), (12, 256, 8, 2048, 128));
        assert_eq!(g.input_width(), 4 + 1 + 2 + 900);
        assert!(GgtConfig { heads: 3, ..g }.validate().is_err());
        assert!(GgtConfig { layers: 0, ..g }.validate().is_err());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in ModelKind::ALL {
            assert_eq!(k.name().parse::<ModelKind>().unwrap(), k);
        }
        assert!("transformer".parse::<ModelKind>().is_err());
    }

    #[test]
    fn kv_round_trip_sets_context_attention_from_kind() {
        let c = ModelConfig::new(ModelKind::GgtNoCa, GgtConfig::desk(5)).with_seed(3);
        assert!(!c.ggt.context_attention);
        let back = ModelConfig::from_kv(&c.to_kv(), ModelConfig::new(ModelKind::Ggt, GgtConfig::default())).unwrap();
        assert_eq!(back, c);
    }
}
