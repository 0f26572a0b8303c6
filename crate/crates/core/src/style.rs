//! Reference-speech style encoders. A mel-spectrogram branch and an MFCC
//! branch each pool to a fixed-width vector; the style vector is their
//! concatenation, mel part first.

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Conv1d, Linear, Lstm, MultiHeadAttention};
use crate::params::ParamBuilder;
use crate::Mat;

pub const MEL_CONV_KERNEL: usize = 5;
pub const MEL_CONV_LAYERS: usize = 2;

/// Spectral stage, gated temporal convolutions, self-attention, projection
/// and mean pooling.
#[derive(Debug, Clone)]
pub struct MelStyleEncoder {
    pub spectral: [Linear; 2],
    pub convs: Vec<Conv1d>,
    pub attention: MultiHeadAttention,
    pub projection: Linear,
    pub hidden: usize,
}

impl MelStyleEncoder {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, hidden: usize, heads: usize) -> Self {
        pb.scoped("mel_style", |pb| Self {
            spectral: [
                Linear::new(pb, "spectral0", in_dim, hidden, true),
                Linear::new(pb, "spectral1", hidden, hidden, true),
            ],
            convs: (0..MEL_CONV_LAYERS)
                .map(|i| Conv1d::new(pb, &format!("conv{i}"), hidden, 2 * hidden, MEL_CONV_KERNEL))
                .collect(),
            attention: MultiHeadAttention::new(pb, "attention", hidden, heads),
            projection: Linear::new(pb, "projection", hidden, hidden, true),
            hidden,
        })
    }

    /// `mel` is `T x in_dim`; returns `1 x hidden`.
    pub fn forward(&self, g: &mut Graph, mel: Var) -> Var {
        let mut x = mel;
        for lin in &self.spectral {
            let y = lin.forward(g, x);
            x = g.mish(y);
        }
        for conv in &self.convs {
            let y = conv.forward(g, x);
            let value = g.slice_cols(y, 0, self.hidden);
            let gate = g.slice_cols(y, self.hidden, self.hidden);
            let gate = g.sigmoid(gate);
            let glu = g.mul(value, gate);
            x = g.add(x, glu);
        }
        let att = self.attention.forward(g, x, None).output;
        x = g.add(x, att);
        let y = self.projection.forward(g, x);
        g.mean_rows(y)
    }
}

/// Bidirectional LSTM, self-attention and mean pooling. The pooled width is
/// twice the per-direction width, with no output projection.
#[derive(Debug, Clone)]
pub struct MfccStyleEncoder {
    pub forward_cell: Lstm,
    pub backward_cell: Lstm,
    pub attention: MultiHeadAttention,
}

impl MfccStyleEncoder {
    pub fn new(pb: &mut ParamBuilder, in_dim: usize, hidden: usize, heads: usize) -> Self {
        assert!(hidden.is_multiple_of(2), "MFCC encoder width must be even");
        pb.scoped("mfcc_style", |pb| Self {
            forward_cell: Lstm::new(pb, "lstm_fwd", in_dim, hidden / 2),
            backward_cell: Lstm::new(pb, "lstm_bwd", in_dim, hidden / 2),
            attention: MultiHeadAttention::new(pb, "attention", hidden, heads),
        })
    }

    pub fn forward(&self, g: &mut Graph, mfcc: Var) -> Var {
        let f = self.forward_cell.forward(g, mfcc, false);
        let b = self.backward_cell.forward(g, mfcc, true);
        let states = g.concat_cols(&[f, b]);
        let att = self.attention.forward(g, states, None).output;
        g.mean_rows(att)
    }
}

/// Which encoder fills the second half of the style vector.
#[derive(Debug, Clone)]
pub enum SecondHalf {
    Mfcc(Box<MfccStyleEncoder>),
    /// Learned re-projection of the mel half, used when the MFCC branch is
    /// ablated.
    MelProjection(Linear),
}

#[derive(Debug, Clone)]
pub struct StyleEncoder {
    pub mel: MelStyleEncoder,
    pub second: SecondHalf,
}

impl StyleEncoder {
    pub fn new(pb: &mut ParamBuilder, hidden: usize, heads: usize, use_mfcc: bool) -> Self {
        pb.scoped("style", |pb| {
            let mel = MelStyleEncoder::new(pb, dstts_dsp::N_MELS, hidden, heads);
            let second = if use_mfcc {
                SecondHalf::Mfcc(Box::new(MfccStyleEncoder::new(pb, dstts_dsp::N_MFCC, hidden, heads)))
            } else {
                SecondHalf::MelProjection(Linear::new(pb, "mel_to_second", hidden, hidden, true))
            };
            Self { mel, second }
        })
    }

    pub fn dim(&self) -> usize {
        2 * self.mel.hidden
    }

    /// Returns the `1 x 2*hidden` style vector.
    pub fn forward(&self, g: &mut Graph, mel: &Mat, mfcc: &Mat) -> Result<Var> {
        check_frames(mel, dstts_dsp::N_MELS, "mel")?;
        let mel_var = g.constant(mel.clone());
        let a = self.mel.forward(g, mel_var);
        let b = match &self.second {
            SecondHalf::Mfcc(enc) => {
                check_frames(mfcc, dstts_dsp::N_MFCC, "mfcc")?;
                let mfcc_var = g.constant(mfcc.clone());
                enc.forward(g, mfcc_var)
            }
            SecondHalf::MelProjection(lin) => lin.forward(g, a),
        };
        Ok(g.concat_cols(&[a, b]))
    }
}

fn check_frames(m: &Mat, width: usize, what: &str) -> Result<()> {
    if m.nrows() == 0 {
        return Err(CoreError::Empty(format!("{what} reference has no frames")));
    }
    if m.ncols() != width {
        return Err(CoreError::Shape(format!(
            "{what} reference has {} channels, expected {width}",
            m.ncols()
        )));
    }
    Ok(())
}
