//! Stacked LSTM / vanilla RNN sequence-to-sequence networks with a sigmoid linear head.

mod cell;
pub mod checkpoint;
mod network;
mod params;

pub use cell::{lstm_cell_forward, rnn_cell_forward, LstmStepCache, RnnStepCache};
pub use network::{
    forward_batch, forward_with_masks, network_forward, sample_dropout_masks, DropoutMasks, ForwardCache, LayerCache, Mode,
    SequenceBatch,
};
pub use params::{init_params, CellParams, Gate, LstmCellParams, NetworkParams, RnnCellParams};

use serde::{Deserialize, Serialize};

use crate::dataio::{FEATURE_COUNT, INPUT_DAYS, OUTPUT_DAYS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    #[default]
    Lstm,
    Rnn,
}

impl CellKind {
    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Rnn => "rnn",
        }
    }
}

impl std::fmt::Display for CellKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for CellKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lstm" => Ok(CellKind::Lstm),
            "rnn" => Ok(CellKind::Rnn),
            other => Err(Error::arg(format!("unknown cell kind '{other}'"))),
        }
    }
}

/// What the linear head reads from the top recurrent layer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Every timestep's hidden state, concatenated (`input_len * hidden` inputs).
    #[default]
    AllStates,
    /// Only the final hidden state.
    LastState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub cell_kind: CellKind,
    pub num_layers: usize,
    pub hidden_size: usize,
    pub dropout_rate: f64,
    pub input_len: usize,
    pub output_len: usize,
    pub feature_count: usize,
    pub head: HeadMode,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cell_kind: CellKind::Lstm,
            num_layers: 2,
            hidden_size: 30,
            dropout_rate: 0.1,
            input_len: INPUT_DAYS,
            output_len: OUTPUT_DAYS,
            feature_count: FEATURE_COUNT,
            head: HeadMode::AllStates,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 {
            return Err(Error::arg("num_layers must be at least 1"));
        }
        if self.hidden_size == 0 {
            return Err(Error::arg("hidden_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::arg(format!(
                "dropout_rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.input_len == 0 || self.output_len == 0 || self.feature_count == 0 {
            return Err(Error::arg("input_len, output_len and feature_count must be positive"));
        }
        Ok(())
    }

    /// Input width of recurrent layer `layer`.
    pub fn layer_input_size(&self, layer: usize) -> usize {
        if layer == 0 {
            self.feature_count
        } else {
            self.hidden_size
        }
    }

    /// Number of values the linear head reads.
    pub fn head_input_size(&self) -> usize {
        match self.head {
            HeadMode::AllStates => self.input_len * self.hidden_size,
            HeadMode::LastState => self.hidden_size,
        }
    }

    /// Shapes of every parameter tensor in checkpoint order.
    pub fn tensor_shapes(&self) -> Vec<(usize, usize)> {
        let gates = match self.cell_kind {
            CellKind::Lstm => 4,
            CellKind::Rnn => 1,
        };
        let h = self.hidden_size;
        let mut shapes = Vec::with_capacity(2 * self.num_layers + 2);
        for l in 0..self.num_layers {
            shapes.push((gates * h, h + self.layer_input_size(l)));
            shapes.push((1, gates * h));
        }
        shapes.push((self.output_len, self.head_input_size()));
        shapes.push((1, self.output_len));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.tensor_shapes().iter().map(|(r, c)| r * c).sum()
    }
}
