use serde::{Deserialize, Serialize};

use crate::dsp::StftParams;
use crate::embed::EMBEDDING_DIM;
use crate::error::{Error, Result};

/// Model family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Time-domain model with learnable encoder/decoder and residual LSTM blocks.
    E3net,
    /// STFT-magnitude masking model with plain LSTM layers.
    Vfl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Aec,
    Pse,
    PseAec,
}

/// Joint-model variants compared in the ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Mic features, far-end features and embedding concatenated at the
    /// input; no align-block, no bypass, no second projection.
    Naive,
    /// Align-block, late embedding, bypass; no attention-weight skip.
    NoSc,
    /// Everything, including the attention-weight skip connection.
    Sc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub task: Task,
    #[serde(default)]
    pub ablation: Option<Ablation>,
    pub f_mic: usize,
    pub f_far: usize,
    pub f_emb: usize,
    pub f_emb_hid: usize,
    pub n1: usize,
    pub n2: usize,
    pub vfl_hidden: usize,
    pub win: usize,
    pub hop: usize,
    pub align_window: usize,
    pub align_dim: usize,
    pub emb_dim: usize,
    /// Power-law exponent applied to STFT magnitudes (STFT-domain model).
    pub compression: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::E3net, Task::PseAec, Some(Ablation::Sc))
    }
}

impl ModelConfig {
    pub fn new(variant: Variant, task: Task, ablation: Option<Ablation>) -> Self {
        Self {
            variant,
            task,
            ablation,
            f_mic: 2048,
            f_far: 256,
            f_emb: 128,
            f_emb_hid: 768,
            n1: 2,
            n2: 2,
            vfl_hidden: 512,
            win: 320,
            hop: 160,
            align_window: 100,
            align_dim: 64,
            emb_dim: EMBEDDING_DIM,
            compression: 0.3,
        }
    }

    /// Desk-scale configuration used for the overfit experiments.
    pub fn tiny(variant: Variant, task: Task, ablation: Option<Ablation>) -> Self {
        Self {
            f_mic: 64,
            f_far: 16,
            f_emb: 16,
            f_emb_hid: 48,
            n1: 1,
            n2: 1,
            vfl_hidden: 32,
            align_window: 32,
            ..Self::new(variant, task, ablation)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match (self.task, self.ablation) {
            (Task::PseAec, None) => return bad("pse_aec models need an ablation (naive, no_sc or sc)".into()),
            (Task::Aec | Task::Pse, Some(a)) => {
                return bad(format!("ablation {a:?} only applies to pse_aec models"))
            }
            _ => {}
        }
        let dims = [
            ("f_mic", self.f_mic),
            ("f_far", self.f_far),
            ("f_emb", self.f_emb),
            ("f_emb_hid", self.f_emb_hid),
            ("n1", self.n1),
            ("n2", self.n2),
            ("vfl_hidden", self.vfl_hidden),
            ("align_window", self.align_window),
            ("align_dim", self.align_dim),
            ("emb_dim", self.emb_dim),
        ];
        for (name, v) in dims {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.emb_dim != EMBEDDING_DIM {
            return bad(format!("emb_dim must be {EMBEDDING_DIM}"));
        }
        if self.hop == 0 || self.win == 0 || self.hop > self.win || !self.win.is_multiple_of(self.hop) {
            return bad(format!("invalid window/hop {}/{}", self.win, self.hop));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return bad(format!("compression {} outside (0, 1]", self.compression));
        }
        if self.variant == Variant::Vfl {
            StftParams::new(self.win, self.hop, self.win).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn stft_params(&self) -> StftParams {
        StftParams {
            win_length: self.win,
            hop_length: self.hop,
            fft_size: self.win,
        }
    }

    pub fn layout(&self) -> Layout {
        Layout::of(self)
    }

    /// Short label such as `e3net/pse_aec/sc`.
    pub fn label(&self) -> String {
        let v = match self.variant {
            Variant::E3net => "e3net",
            Variant::Vfl => "vfl",
        };
        let t = match self.task {
            Task::Aec => "aec",
            Task::Pse => "pse",
            Task::PseAec => "pse_aec",
        };
        match self.ablation {
            Some(Ablation::Naive) => format!("{v}/{t}/naive"),
            Some(Ablation::NoSc) => format!("{v}/{t}/no_sc"),
            Some(Ablation::Sc) => format!("{v}/{t}/sc"),
            None => format!("{v}/{t}"),
        }
    }
}

/// Which inputs feed which stage, derived from task and ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub far_branch: bool,
    pub align: bool,
    pub emb_at_input: bool,
    /// Concatenation after the first `n1` temporal blocks.
    pub mid_concat: bool,
    pub emb_at_mid: bool,
    pub weights_at_mid: bool,
    pub bypass: bool,
}

impl Layout {
    pub fn of(config: &ModelConfig) -> Self {
        match (config.task, config.ablation) {
            (Task::Pse, _) => Layout {
                far_branch: false,
                align: false,
                emb_at_input: true,
                mid_concat: false,
                emb_at_mid: false,
                weights_at_mid: false,
                bypass: false,
            },
            (Task::Aec, _) => Layout {
                far_branch: true,
                align: true,
                emb_at_input: false,
                mid_concat: true,
                emb_at_mid: false,
                weights_at_mid: true,
                bypass: false,
            },
            (Task::PseAec, Some(Ablation::Naive)) => Layout {
                far_branch: true,
                align: false,
                emb_at_input: true,
                mid_concat: false,
                emb_at_mid: false,
                weights_at_mid: false,
                bypass: false,
            },
            (Task::PseAec, ablation) => {
                let sc = ablation != Some(Ablation::NoSc);
                Layout {
                    far_branch: true,
                    align: true,
                    emb_at_input: false,
                    mid_concat: true,
                    emb_at_mid: true,
                    weights_at_mid: sc,
                    bypass: true,
                }
            }
        }
    }

    pub fn uses_embedding(&self) -> bool {
        self.emb_at_input || self.emb_at_mid
    }
}
