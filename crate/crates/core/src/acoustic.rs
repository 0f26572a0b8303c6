//! Phoneme encoder and mel decoder: stacks of feed-forward transformer
//! blocks whose normalisation slots are style-conditioned SGF layers.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::graph::{Graph, Var};
use crate::nn::{row_mask, Conv1d, Linear, MultiHeadAttention};
use crate::params::{ParamBuilder, ParamId};
use crate::sgf::SgfLayer;
use crate::Mat;

/// Width and depth of one block stack.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockDims {
    pub hidden: usize,
    pub heads: usize,
    pub filter: usize,
    pub kernel: usize,
    pub style_dim: usize,
    pub dropout: f64,
}

/// Sinusoidal position table, `len x dim`: `sin` on even channels and
/// `cos` on odd ones, with wavelength growing geometrically per pair.
pub fn positional_encoding(len: usize, dim: usize) -> Mat {
    Array2::from_shape_fn((len, dim), |(pos, c)| {
        let pair = (c / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

#[derive(Debug, Clone)]
pub struct FftBlock {
    pub attention: MultiHeadAttention,
    pub sgf_attention: SgfLayer,
    pub conv_in: Conv1d,
    pub conv_out: Conv1d,
    pub sgf_conv: SgfLayer,
    pub dropout: f64,
}

impl FftBlock {
    pub fn new(pb: &mut ParamBuilder, name: &str, d: &BlockDims) -> Self {
        pb.scoped(name, |pb| Self {
            attention: MultiHeadAttention::new(pb, "attention", d.hidden, d.heads),
            sgf_attention: SgfLayer::new(pb, "sgf_attention", d.style_dim, d.hidden),
            conv_in: Conv1d::new(pb, "conv_in", d.hidden, d.filter, d.kernel),
            conv_out: Conv1d::new(pb, "conv_out", d.filter, d.hidden, 1),
            sgf_conv: SgfLayer::new(pb, "sgf_conv", d.style_dim, d.hidden),
            dropout: d.dropout,
        })
    }

    /// `mask[i] == false` marks row `i` as padding: it is hidden from
    /// attention and zeroed before each convolution and at the output.
    pub fn forward(&self, g: &mut Graph, h: Var, style: Var, mask: Option<&[bool]>) -> Var {
        let width = g.shape(h).1;
        let zero_padding = |g: &mut Graph, x: Var| match mask {
            Some(m) => g.mul_const(x, row_mask(m, width)),
            None => x,
        };
        let att = self.attention.forward(g, h, mask).output;
        let att = g.dropout(att, self.dropout);
        let x = g.add(h, att);
        let x = self.sgf_attention.forward(g, x, style);
        let x = zero_padding(g, x);
        let c = self.conv_in.forward(g, x);
        let c = g.relu(c);
        let c = self.conv_out.forward(g, c);
        let c = g.dropout(c, self.dropout);
        let y = g.add(x, c);
        let y = self.sgf_conv.forward(g, y, style);
        zero_padding(g, y)
    }

    pub fn sgf_layers(&self) -> [&SgfLayer; 2] {
        [&self.sgf_attention, &self.sgf_conv]
    }
}

#[derive(Debug, Clone)]
pub struct PhonemeEncoder {
    pub embedding: ParamId,
    pub blocks: Vec<FftBlock>,
    pub vocab_size: usize,
}

impl PhonemeEncoder {
    pub fn new(pb: &mut ParamBuilder, vocab_size: usize, blocks: usize, d: &BlockDims) -> Self {
        pb.scoped("encoder", |pb| Self {
            embedding: pb.uniform("embedding", vocab_size, d.hidden, d.hidden),
            blocks: (0..blocks).map(|i| FftBlock::new(pb, &format!("block{i}"), d)).collect(),
            vocab_size,
        })
    }

    /// Embedding lookup plus positional encoding, `len x hidden`.
    pub fn embed(&self, g: &mut Graph, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(CoreError::Empty("phoneme sequence".into()));
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= self.vocab_size) {
            return Err(CoreError::PhonemeOutOfRange {
                id,
                size: self.vocab_size,
            });
        }
        let table = g.param(self.embedding);
        let rows = g.gather_rows(table, ids);
        let pe = g.constant(positional_encoding(ids.len(), g.shape(table).1));
        Ok(g.add(rows, pe))
    }

    pub fn forward(&self, g: &mut Graph, ids: &[usize], style: Var, mask: Option<&[bool]>) -> Result<Var> {
        let mut h = self.embed(g, ids)?;
        for block in &self.blocks {
            h = block.forward(g, h, style, mask);
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct MelDecoder {
    pub blocks: Vec<FftBlock>,
    pub projection: Linear,
}

impl MelDecoder {
    pub fn new(pb: &mut ParamBuilder, blocks: usize, d: &BlockDims) -> Self {
        pb.scoped("decoder", |pb| Self {
            blocks: (0..blocks).map(|i| FftBlock::new(pb, &format!("block{i}"), d)).collect(),
            projection: Linear::new(pb, "mel_projection", d.hidden, dstts_dsp::N_MELS, true),
        })
    }

    /// Frame-level hidden sequence to `T x 80` log-mel.
    pub fn forward(&self, g: &mut Graph, frames: Var, style: Var, mask: Option<&[bool]>) -> Var {
        let (t, width) = g.shape(frames);
        let pe = g.constant(positional_encoding(t, width));
        let mut h = g.add(frames, pe);
        for block in &self.blocks {
            h = block.forward(g, h, style, mask);
        }
        self.projection.forward(g, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;
    use crate::sgf::SgfLayerParams;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const DIMS: BlockDims = BlockDims {
        hidden: 16,
        heads: 2,
        filter: 32,
        kernel: 9,
        style_dim: 8,
        dropout: 0.1,
    };

    fn random(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-5.0..5.0))
    }

    fn zero_sgf(store: &mut ParamStore, block: &FftBlock) {
        for layer in block.sgf_layers() {
            layer.load(store, &SgfLayerParams::initial(DIMS.style_dim, DIMS.hidden));
        }
    }

    #[test]
    fn positional_encoding_first_row() {
        let pe = positional_encoding(3, 6);
        for c in 0..6 {
            assert_eq!(pe[[0, c]], if c % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn embedding_rows_differ_by_position() {
        let mut pb = ParamBuilder::new(1);
        let enc = PhonemeEncoder::new(&mut pb, 5, 1, &DIMS);
        let store = pb.finish();
        let mut g = Graph::new(&store);
        let ids = [3, 1, 2, 4, 0, 3, 1, 1, 2, 2];
        let e = enc.embed(&mut g, &ids).unwrap();
        let e = g.value(e);
        assert_eq!(e.dim(), (10, 16));
        let pe = positional_encoding(10, 16);
        let diff = &e.row(5) - &e.row(0);
        let expect = &pe.row(5) - &pe.row(0);
        for (a, b) in diff.iter().zip(expect.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(enc.embed(&mut g, &[5]).is_err());
        assert!(enc.embed(&mut g, &[]).is_err());
    }

    #[test]
    fn block_preserves_length_and_is_zero_at_paper_init() {
        let mut pb = ParamBuilder::new(2);
        let block = FftBlock::new(&mut pb, "b", &DIMS);
        let mut store = pb.finish();
        for len in [1, 4, 13] {
            let mut g = Graph::new(&store);
            let h = g.constant(random(len, 16, len as u64));
            let s = g.constant(random(1, 8, 99));
            let y = block.forward(&mut g, h, s, None);
            assert_eq!(g.shape(y), (len, 16));
        }
        zero_sgf(&mut store, &block);
        let mut g = Graph::new(&store);
        let h = g.constant(random(6, 16, 3));
        let s = g.constant(random(1, 8, 4));
        let y = block.forward(&mut g, h, s, None);
        assert!(g.value(y).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn padded_content_does_not_leak() {
        let mut pb = ParamBuilder::new(3);
        let enc = PhonemeEncoder::new(&mut pb, 5, 2, &DIMS);
        let store = pb.finish();
        let mask = [true, true, true, true, false, false, false];
        let run = |ids: &[usize]| {
            let mut g = Graph::new(&store);
            let s = g.constant(random(1, 8, 5));
            let y = enc.forward(&mut g, ids, s, Some(&mask)).unwrap();
            g.value(y).clone()
        };
        let a = run(&[1, 2, 3, 4, 0, 0, 0]);
        let b = run(&[1, 2, 3, 4, 2, 3, 1]);
        assert_eq!(a.slice(ndarray::s![..4, ..]), b.slice(ndarray::s![..4, ..]));
    }

    #[test]
    fn decoder_on_zero_input_at_paper_init_returns_bias() {
        let mut pb = ParamBuilder::new(4);
        let dec = MelDecoder::new(&mut pb, 2, &DIMS);
        let mut store = pb.finish();
        for block in &dec.blocks {
            zero_sgf(&mut store, block);
        }
        let bias: Vec<f64> = (0..80).map(|i| i as f64 * 0.01).collect();
        store
            .get_mut(dec.projection.bias.unwrap())
            .assign(&Array2::from_shape_vec((1, 80), bias.clone()).unwrap());
        let mut g = Graph::new(&store);
        let frames = g.constant(Array2::zeros((7, 16)));
        let s = g.constant(random(1, 8, 6));
        let out = dec.forward(&mut g, frames, s, None);
        let out = g.value(out);
        assert_eq!(out.dim(), (7, 80));
        for row in out.rows() {
            assert_eq!(row.to_vec(), bias);
        }
    }

    #[test]
    fn decoder_is_finite_on_random_input() {
        let mut pb = ParamBuilder::new(5);
        let dec = MelDecoder::new(&mut pb, 2, &DIMS);
        let store = pb.finish();
        let mut g = Graph::new(&store);
        let frames = g.constant(random(20, 16, 7));
        let s = g.constant(random(1, 8, 8));
        let out = dec.forward(&mut g, frames, s, None);
        assert!(g.value(out).iter().all(|v| v.is_finite()));
    }
}
