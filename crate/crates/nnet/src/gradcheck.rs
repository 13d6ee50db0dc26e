//! Central finite-difference verification of [`Graph::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{NnetError, Result};
use crate::graph::{Graph, Mask, Var};
use crate::layers::{
    Decoder, Embedding, Encoder, FeedForward, LayerNorm, Linear, MultiHeadAttention,
};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Gradient magnitudes below this are compared on an absolute scale.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

/// Compares analytic gradients of `loss_fn` against central differences,
/// perturbing every scalar of `params` by `±epsilon`.
///
/// `loss_fn` must build a deterministic scalar loss on the graph it is
/// given; it is called twice per scalar parameter.
pub fn gradcheck<F>(params: &mut ParamStore, loss_fn: F, epsilon: f64) -> Result<GradcheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(NnetError::Config(format!(
            "epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };

    let analytic = {
        let mut g = Graph::new(params);
        let loss = loss_fn(&mut g)?;
        let grads = g.backward(loss);
        params
            .ids()
            .map(|id| grads.dense(id, params))
            .collect::<Vec<_>>()
    };

    let mut report = GradcheckReport {
        max_relative_error: 0.0,
        worst: None,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for i in 0..params.get(id).len() {
            let original = params.get(id).data()[i];
            params.get_mut(id).data_mut()[i] = original + epsilon;
            let plus = eval(params)?;
            params.get_mut(id).data_mut()[i] = original - epsilon;
            let minus = eval(params)?;
            params.get_mut(id).data_mut()[i] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = analytic[id.index()].data()[i];
            let denom = a.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
            let err = (a - numeric).abs() / denom;
            report.checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}

pub type LossBuilder = Box<dyn Fn(&mut Graph) -> Result<Var>>;

/// A named parameter set with a scalar loss built over fixed inputs.
pub struct Fragment {
    pub name: &'static str,
    pub params: ParamStore,
    pub loss: LossBuilder,
}

impl Fragment {
    pub fn check(&mut self, epsilon: f64) -> Result<GradcheckReport> {
        gradcheck(&mut self.params, &self.loss, epsilon)
    }
}

fn fixed_input(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

fn fragment_config(d_model: usize, layers: usize) -> ModelConfig {
    ModelConfig {
        d_model,
        n_heads: 2,
        d_ff: 2 * d_model,
        encoder_layers: layers,
        decoder_layers: layers,
        max_len: 16,
        dropout: 0.0,
        src_vocab: 9,
        tgt_vocab: 7,
    }
}

/// One fragment per layer type plus composed two-layer models, each small
/// enough for an exhaustive finite-difference sweep.
pub fn standard_fragments(seed: u64) -> Vec<Fragment> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // linear -> softmax -> cross entropy
    {
        let mut params = ParamStore::new();
        let lin = Linear::new(&mut params, "linear", 5, 4, &mut rng);
        let x = fixed_input(3, 5, &mut rng);
        out.push(Fragment {
            name: "linear+softmax",
            params,
            loss: Box::new(move |g| {
                let xv = g.input(x.clone());
                let logits = lin.forward(g, xv)?;
                g.cross_entropy(logits, &[1, 3, 0], None, 0.0, None)
            }),
        });
    }

    // layer norm; a random projection keeps the loss from being trivially symmetric
    {
        let mut params = ParamStore::new();
        let norm = LayerNorm::new(&mut params, "norm", 6);
        for id in [norm.gamma, norm.beta] {
            for v in params.get_mut(id).data_mut() {
                *v += rng.gen_range(-0.5..0.5);
            }
        }
        let x = fixed_input(4, 6, &mut rng);
        let probe = fixed_input(4, 6, &mut rng);
        out.push(Fragment {
            name: "layer_norm",
            params,
            loss: Box::new(move |g| {
                let xv = g.input(x.clone());
                let y = norm.forward(g, xv)?;
                let p = g.input(probe.clone());
                let weighted = g.mul(y, p)?;
                Ok(g.sum(weighted))
            }),
        });
    }

    // masked multi-head attention with a cross entropy head
    {
        let mut params = ParamStore::new();
        let attn = MultiHeadAttention::new(&mut params, "attn", 8, 2, &mut rng);
        let q = fixed_input(3, 8, &mut rng);
        let m = fixed_input(4, 8, &mut rng);
        let mask = Mask::key_padding(3, &[false, false, true, false]);
        out.push(Fragment {
            name: "multi_head_attention",
            params,
            loss: Box::new(move |g| {
                let qv = g.input(q.clone());
                let mv = g.input(m.clone());
                let y = attn.forward(g, qv, mv, Some(&mask))?;
                g.cross_entropy(y, &[2, 7, 4], None, 0.1, None)
            }),
        });
    }

    // feed-forward
    {
        let mut params = ParamStore::new();
        let ffn = FeedForward::new(&mut params, "ffn", 6, 12, &mut rng);
        let x = fixed_input(3, 6, &mut rng);
        out.push(Fragment {
            name: "feed_forward",
            params,
            loss: Box::new(move |g| {
                let xv = g.input(x.clone());
                let y = ffn.forward(g, xv)?;
                g.cross_entropy(y, &[0, 5, 2], None, 0.0, None)
            }),
        });
    }

    // embedding + positions, label smoothing and an ignored position
    {
        let mut params = ParamStore::new();
        let embed = Embedding::new(&mut params, "embed", 6, 6, 8, &mut rng);
        out.push(Fragment {
            name: "embedding+smoothed_cross_entropy",
            params,
            loss: Box::new(move |g| {
                let y = embed.forward(g, &[1, 4, 4, 0])?;
                g.cross_entropy(y, &[2, 0, 5, 3], Some(3), 0.1, None)
            }),
        });
    }

    // full two-layer encoder, d_model 16
    {
        let cfg = fragment_config(16, 2);
        let mut params = ParamStore::new();
        let enc = Encoder::new(&mut params, "enc", &cfg, cfg.src_vocab, &mut rng);
        let head = Linear::new(&mut params, "head", cfg.d_model, cfg.src_vocab, &mut rng);
        out.push(Fragment {
            name: "encoder_2_layer",
            params,
            loss: Box::new(move |g| {
                let h = enc.forward(
                    g,
                    &[3, 1, 4, 1, 5],
                    Some(&[false, false, false, false, true]),
                )?;
                let logits = head.forward(g, h)?;
                g.cross_entropy(logits, &[2, 7, 1, 8, 0], Some(0), 0.0, None)
            }),
        });
    }

    // composed two-layer encoder-decoder
    {
        let cfg = fragment_config(8, 2);
        let mut params = ParamStore::new();
        let enc = Encoder::new(&mut params, "enc", &cfg, cfg.src_vocab, &mut rng);
        let dec = Decoder::new(&mut params, "dec", &cfg, cfg.tgt_vocab, &mut rng);
        let proj = Linear::new(&mut params, "proj", cfg.d_model, cfg.tgt_vocab, &mut rng);
        out.push(Fragment {
            name: "encoder_decoder_2_layer",
            params,
            loss: Box::new(move |g| {
                let memory = enc.forward(g, &[4, 8, 2, 6], None)?;
                let h = dec.forward(g, &[1, 5, 3, 6], memory, None)?;
                let logits = proj.forward(g, h)?;
                g.cross_entropy(logits, &[5, 3, 6, 2], None, 0.1, None)
            }),
        });
    }

    out
}
