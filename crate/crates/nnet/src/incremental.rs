//! Step-by-step decoding with cached self-attention keys and values.
//!
//! Produces the same hidden states as a full causal [`Decoder`] pass, one
//! position at a time, without recomputing the prefix.

use std::sync::Arc;

use crate::error::Result;
use crate::graph::{Graph, Mask};
use crate::layers::{residual, Decoder};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct DecoderCache {
    position: usize,
    keys: Vec<Option<Tensor>>,
    values: Vec<Option<Tensor>>,
    memory: Arc<Vec<(Tensor, Tensor)>>,
    memory_padding: Option<Arc<Vec<bool>>>,
}

impl DecoderCache {
    /// Number of positions decoded so far.
    pub fn position(&self) -> usize {
        self.position
    }
}

fn append_row(cache: &mut Option<Tensor>, row: &Tensor) {
    let next = match cache.take() {
        None => row.clone(),
        Some(t) => {
            let (m, n) = t.dims2();
            let mut data = t.into_data();
            data.extend_from_slice(row.data());
            Tensor::new(vec![m + 1, n], data).expect("row width matches")
        }
    };
    *cache = Some(next);
}

impl Decoder {
    /// Projects the encoder memory once for every cross-attention layer.
    pub fn start(
        &self,
        params: &ParamStore,
        memory: &Tensor,
        memory_padding: Option<&[bool]>,
    ) -> Result<DecoderCache> {
        let mut g = Graph::new(params);
        let mem = g.input(memory.clone());
        let mut projected = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let k = layer.cross_attention.key.forward(&mut g, mem)?;
            let v = layer.cross_attention.value.forward(&mut g, mem)?;
            projected.push((g.value(k).clone(), g.value(v).clone()));
        }
        Ok(DecoderCache {
            position: 0,
            keys: vec![None; self.layers.len()],
            values: vec![None; self.layers.len()],
            memory: Arc::new(projected),
            memory_padding: memory_padding.map(|p| Arc::new(p.to_vec())),
        })
    }

    /// Feeds one token and returns its hidden state `(1, d_model)`.
    pub fn step(
        &self,
        params: &ParamStore,
        cache: &mut DecoderCache,
        token: usize,
    ) -> Result<Tensor> {
        let mut g = Graph::new(params);
        let mut x = self
            .embedding
            .forward_at(&mut g, &[token], cache.position)?;
        let memory_mask = cache
            .memory_padding
            .as_ref()
            .map(|p| Mask::key_padding(1, p));
        for (l, layer) in self.layers.iter().enumerate() {
            let sa = &layer.self_attention;
            let q = sa.query.forward(&mut g, x)?;
            let k = sa.key.forward(&mut g, x)?;
            let v = sa.value.forward(&mut g, x)?;
            append_row(&mut cache.keys[l], g.value(k));
            append_row(&mut cache.values[l], g.value(v));
            let k = g.input(cache.keys[l].clone().expect("just appended"));
            let v = g.input(cache.values[l].clone().expect("just appended"));
            let a = sa.attend(&mut g, q, k, v, None)?;
            let h = residual(&mut g, &layer.self_attention_norm, x, a)?;

            let ca = &layer.cross_attention;
            let q = ca.query.forward(&mut g, h)?;
            let (mk, mv) = &cache.memory[l];
            let k = g.input(mk.clone());
            let v = g.input(mv.clone());
            let c = ca.attend(&mut g, q, k, v, memory_mask.as_ref())?;
            let h = residual(&mut g, &layer.cross_attention_norm, h, c)?;

            let f = layer.feed_forward.forward(&mut g, h)?;
            x = residual(&mut g, &layer.feed_forward_norm, h, f)?;
        }
        cache.position += 1;
        Ok(g.value(x).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::layers::{decoder_forward, encoder_forward, Encoder};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_full_decoder_pass() {
        let cfg = ModelConfig {
            d_model: 16,
            n_heads: 4,
            d_ff: 32,
            encoder_layers: 2,
            decoder_layers: 2,
            max_len: 16,
            dropout: 0.1,
            src_vocab: 11,
            tgt_vocab: 9,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, "enc", &cfg, cfg.src_vocab, &mut rng);
        let dec = Decoder::new(&mut store, "dec", &cfg, cfg.tgt_vocab, &mut rng);
        let src = [3, 7, 1, 0];
        let pad = [false, false, false, true];
        let memory = encoder_forward(&enc, &store, &src, Some(&pad)).unwrap();
        let tgt = [1, 4, 8, 2, 5];
        let full = decoder_forward(&dec, &store, &tgt, &memory, Some(&pad)).unwrap();
        let mut cache = dec.start(&store, &memory, Some(&pad)).unwrap();
        for (i, &t) in tgt.iter().enumerate() {
            let row = dec.step(&store, &mut cache, t).unwrap();
            for (a, b) in row.data().iter().zip(full.row(i)) {
                assert!((a - b).abs() < 1e-12, "position {i}: {a} vs {b}");
            }
        }
        assert_eq!(cache.position(), tgt.len());
    }
}
