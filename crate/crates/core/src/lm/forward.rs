use super::model::{LayerSlot, SlotId, TinyLM, Weight};
use super::rope::rotate_in_place;
use crate::adapters::{LoraAdapter, LoraPair};
use crate::error::{Error, Result};
use crate::kv::KvCache;
use crate::tensor::{argmax, dot, rms_norm, silu, Matrix};

/// Token id type.
pub type Token = u32;

/// Attention capture granularity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum AttnCapture {
    #[default]
    Off,
    /// One row per query, averaged over heads.
    HeadMean,
    /// Head-averaged rows plus every head's own row.
    PerHead,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ForwardOptions<'a> {
    pub capture: AttnCapture,
    /// Absolute positions for the new tokens; defaults to continuing the cache.
    pub positions: Option<&'a [usize]>,
    /// LoRA deltas applied on the fly to the slots they target.
    pub adapter: Option<&'a LoraAdapter>,
}

/// Captured attention for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerAttention {
    /// `rows[i][j]`: head-averaged probability of new query `i` on cached key `j`.
    pub rows: Vec<Vec<f32>>,
    /// Absolute position of each key in the matching row.
    pub key_positions: Vec<Vec<usize>>,
    /// `per_head[i][h][j]`, present with [`AttnCapture::PerHead`].
    pub per_head: Option<Vec<Vec<Vec<f32>>>>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `[new tokens × vocab]`.
    pub logits: Matrix,
    pub attn_rows: Option<Vec<LayerAttention>>,
    /// Last-layer residual stream before the final norm, `[new tokens × d_model]`.
    pub final_hidden: Matrix,
}

impl ForwardOutput {
    /// Greedy prediction after each new token.
    pub fn argmax_rows(&self) -> Vec<Token> {
        (0..self.logits.rows).map(|r| argmax(self.logits.row(r)) as Token).collect()
    }
}

/// LoRA pairs resolved to the model's layer layout.
struct ResolvedLora<'a> {
    scale: f64,
    layers: Vec<[Option<&'a LoraPair>; 7]>,
    lm_head: Option<&'a LoraPair>,
}

impl<'a> ResolvedLora<'a> {
    fn new(model: &TinyLM, adapter: &'a LoraAdapter) -> Result<Self> {
        let mut layers = vec![[None; 7]; model.layers.len()];
        let mut lm_head = None;
        for (id, pair) in adapter.pairs() {
            let w = model
                .weight(*id)
                .filter(|_| id.is_adaptable())
                .ok_or_else(|| Error::InvalidInput(format!("adapter targets unknown slot `{id}`")))?;
            let (out, inp) = w.matrix().shape();
            if pair.a.cols != inp || pair.b.rows != out || pair.a.rows != pair.b.cols {
                return Err(Error::Shape(format!("adapter pair for `{id}` does not fit {out}x{inp}")));
            }
            match id {
                SlotId::Layer(i, s) => {
                    let k = LayerSlot::LINEAR.iter().position(|x| x == s).expect("adaptable");
                    layers[*i][k] = Some(pair);
                }
                SlotId::LmHead => lm_head = Some(pair),
                _ => unreachable!("filtered by is_adaptable"),
            }
        }
        Ok(Self { scale: adapter.scale(), layers, lm_head })
    }
}

fn linear(w: &Weight, x: &[f32], lora: Option<&LoraPair>, scale: f64) -> Vec<f32> {
    let mut y = w.matrix().matvec(x);
    if let Some(pair) = lora {
        let ax: Vec<f32> = pair.a.matvec(x);
        for (r, yr) in y.iter_mut().enumerate() {
            let delta = dot(pair.b.row(r), &ax);
            *yr = (*yr as f64 + scale * delta) as f32;
        }
    }
    y
}

impl TinyLM {
    /// Runs the new `tokens` through the model, extending `cache` when given.
    pub fn forward(&self, tokens: &[Token], cache: Option<&mut KvCache>, capture_attn: bool) -> Result<ForwardOutput> {
        let capture = if capture_attn { AttnCapture::HeadMean } else { AttnCapture::Off };
        self.forward_with(tokens, cache, &ForwardOptions { capture, ..Default::default() })
    }

    pub fn forward_with(
        &self,
        tokens: &[Token],
        cache: Option<&mut KvCache>,
        opts: &ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        self.count_forward();
        let cfg = &self.config;
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(Error::TokenOutOfRange { token: t, vocab: cfg.vocab_size });
        }
        let mut local;
        let cache = match cache {
            Some(c) => {
                if c.n_layers() != cfg.n_layers || c.n_kv_heads() != cfg.n_kv_heads || c.head_dim() != cfg.head_dim {
                    return Err(Error::Shape("cache geometry does not match the model".into()));
                }
                c
            }
            None => {
                local = KvCache::for_model(cfg).with_row_window(0);
                &mut local
            }
        };
        let positions: Vec<usize> = match opts.positions {
            Some(p) => {
                if p.len() != tokens.len() {
                    return Err(Error::InvalidInput("positions and tokens differ in length".into()));
                }
                p.to_vec()
            }
            None => (cache.next_position()..cache.next_position() + tokens.len()).collect(),
        };
        let mut prev: Option<usize> = cache.next_position().checked_sub(1);
        for &p in &positions {
            if let Some(max) = prev {
                if p <= max {
                    return Err(Error::NonMonotonePosition { position: p, max });
                }
            }
            if p >= cfg.max_seq {
                return Err(Error::SequenceTooLong { position: p, max_seq: cfg.max_seq });
            }
            prev = Some(p);
        }
        let lora = opts.adapter.map(|a| ResolvedLora::new(self, a)).transpose()?;
        let lora_scale = lora.as_ref().map_or(0.0, |l| l.scale);

        let d = cfg.d_model;
        let (hd, n_heads, group) = (cfg.head_dim, cfg.n_heads, cfg.group_size());
        let width = cfg.kv_dim();
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        let embed = self.tok_embed.matrix();
        let mut xs: Vec<Vec<f32>> = tokens.iter().map(|&t| embed.row(t as usize).to_vec()).collect();
        let mut captured: Vec<LayerAttention> = Vec::new();

        for (l, layer) in self.layers.iter().enumerate() {
            let pairs = lora.as_ref().map(|r| r.layers[l]).unwrap_or([None; 7]);
            let mut cap = LayerAttention { rows: Vec::new(), key_positions: Vec::new(), per_head: None };
            if opts.capture == AttnCapture::PerHead {
                cap.per_head = Some(Vec::new());
            }
            for (x, &pos) in xs.iter_mut().zip(&positions) {
                let h = rms_norm(x, &layer.attn_norm);
                let mut q = linear(&layer.wq, &h, pairs[0], lora_scale);
                let mut k = linear(&layer.wk, &h, pairs[1], lora_scale);
                let v = linear(&layer.wv, &h, pairs[2], lora_scale);
                for head in q.chunks_mut(hd).chain(k.chunks_mut(hd)) {
                    rotate_in_place(head, pos, &self.inv_freq);
                }
                cache.push_unchecked(l, &k, &v, pos);

                let lc = cache.layer(l);
                let n = lc.len();
                let mut mean_row = vec![0.0f64; n];
                let mut head_rows = Vec::new();
                let mut attn_out = vec![0.0f32; cfg.q_dim()];
                let mut probs = vec![0.0f64; n];
                for hh in 0..n_heads {
                    let kvh = hh / group;
                    let qh = &q[hh * hd..(hh + 1) * hd];
                    let mut max = f64::NEG_INFINITY;
                    for (j, p) in probs.iter_mut().enumerate() {
                        let key = &lc.key(j, width)[kvh * hd..(kvh + 1) * hd];
                        *p = dot(qh, key) * inv_sqrt;
                        max = max.max(*p);
                    }
                    let mut sum = 0.0;
                    for p in probs.iter_mut() {
                        *p = (*p - max).exp();
                        sum += *p;
                    }
                    let mut acc = vec![0.0f64; hd];
                    for (j, p) in probs.iter_mut().enumerate() {
                        *p /= sum;
                        let val = &lc.value(j, width)[kvh * hd..(kvh + 1) * hd];
                        for (a, &vv) in acc.iter_mut().zip(val) {
                            *a += *p * vv as f64;
                        }
                        mean_row[j] += *p;
                    }
                    for (o, a) in attn_out[hh * hd..(hh + 1) * hd].iter_mut().zip(acc) {
                        *o = a as f32;
                    }
                    if opts.capture == AttnCapture::PerHead {
                        head_rows.push(probs.iter().map(|&p| p as f32).collect::<Vec<f32>>());
                    }
                }
                for m in mean_row.iter_mut() {
                    *m /= n_heads as f64;
                }
                if opts.capture != AttnCapture::Off {
                    cap.rows.push(mean_row.iter().map(|&p| p as f32).collect());
                    cap.key_positions.push(lc.positions().to_vec());
                    if let Some(ph) = cap.per_head.as_mut() {
                        ph.push(head_rows);
                    }
                }
                cache.observe(l, pos, mean_row);

                let o = linear(&layer.wo, &attn_out, pairs[3], lora_scale);
                for (xi, oi) in x.iter_mut().zip(o) {
                    *xi += oi;
                }
                let h2 = rms_norm(x, &layer.mlp_norm);
                let gate = linear(&layer.w_gate, &h2, pairs[4], lora_scale);
                let up = linear(&layer.w_up, &h2, pairs[5], lora_scale);
                let act: Vec<f32> = gate.iter().zip(&up).map(|(&g, &u)| silu(g) * u).collect();
                let down = linear(&layer.w_down, &act, pairs[6], lora_scale);
                for (xi, di) in x.iter_mut().zip(down) {
                    *xi += di;
                }
                cache.enforce_budget(l)?;
            }
            if opts.capture != AttnCapture::Off {
                captured.push(cap);
            }
        }

        let out_w = self.output_weight();
        let head_pair = lora.as_ref().and_then(|r| r.lm_head);
        let mut logits = Matrix::zeros(tokens.len(), cfg.vocab_size);
        let mut final_hidden = Matrix::zeros(tokens.len(), d);
        for (i, x) in xs.iter().enumerate() {
            final_hidden.row_mut(i).copy_from_slice(x);
            let hn = rms_norm(x, &self.final_norm);
            logits.row_mut(i).copy_from_slice(&linear(out_w, &hn, head_pair, lora_scale));
        }
        Ok(ForwardOutput { logits, attn_rows: (opts.capture != AttnCapture::Off).then_some(captured), final_hidden })
    }

    /// Decodes `hidden` (a last-layer residual vector) through the final norm
    /// and output projection.
    pub fn lm_head_logits(&self, hidden: &[f32]) -> Vec<f32> {
        let hn = rms_norm(hidden, &self.final_norm);
        self.output_weight().matrix().matvec(&hn)
    }

    /// Teacher-forced logits for every position of `tokens`, with no cache reuse.
    pub fn logits(&self, tokens: &[Token]) -> Result<Matrix> {
        Ok(self.forward(tokens, None, false)?.logits)
    }
}

/// Appends `max_new` argmax tokens to `prompt` (lowest id wins ties).
pub fn greedy_decode(model: &TinyLM, prompt: &[Token], max_new: usize) -> Result<Vec<Token>> {
    if prompt.is_empty() {
        return Err(Error::InvalidInput("prompt must be nonempty".into()));
    }
    let mut out = prompt.to_vec();
    if max_new == 0 {
        return Ok(out);
    }
    let mut cache = KvCache::for_model(&model.config).with_row_window(0);
    let mut logits = model.forward(prompt, Some(&mut cache), false)?.logits;
    loop {
        let next = argmax(logits.row(logits.rows - 1)) as Token;
        out.push(next);
        if out.len() - prompt.len() == max_new {
            return Ok(out);
        }
        logits = model.forward(&[next], Some(&mut cache), false)?.logits;
    }
}
