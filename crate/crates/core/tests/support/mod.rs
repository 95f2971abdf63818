//! Test-only oracles: a straight-line scalar evaluator of the whole model,
//! brute-force correlation references and a finite-difference harness.
//! Nothing here calls into the graph code.

#![allow(dead_code)]

use priorformer_core::dataio::{FeatureSequence, Frame};
use priorformer_core::encoder::EncoderConfig;
use priorformer_core::model::{ModelConfig, ModelParams};
use priorformer_core::rng::SeededRng;
use priorformer_core::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &Tensor) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| t.data()[i * c..(i + 1) * c].to_vec()).collect()
}

fn linear(x: &[f64], w: &Mat, b: Option<&[f64]>) -> Vec<f64> {
    let cols = w[0].len();
    let mut out = vec![0.0; cols];
    for j in 0..cols {
        let mut s = 0.0;
        for (i, xi) in x.iter().enumerate() {
            s += xi * w[i][j];
        }
        out[j] = s + b.map_or(0.0, |b| b[j]);
    }
    out
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let denom = (var + 1e-5).sqrt();
    x.iter()
        .zip(gain.iter().zip(bias))
        .map(|(v, (g, b))| (v - mean) / denom * g + b)
        .collect()
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn attention(z: &Mat, wq: &Mat, wk: &Mat, wv: &Mat, wo: &Mat, heads: usize) -> Mat {
    let d = z[0].len();
    let dk = d / heads;
    let q: Mat = z.iter().map(|r| linear(r, wq, None)).collect();
    let k: Mat = z.iter().map(|r| linear(r, wk, None)).collect();
    let v: Mat = z.iter().map(|r| linear(r, wv, None)).collect();
    let rows = z.len();
    let mut concat = vec![vec![0.0; d]; rows];
    for h in 0..heads {
        let cols = h * dk..(h + 1) * dk;
        for i in 0..rows {
            let scores: Vec<f64> = (0..rows)
                .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let total: f64 = e.iter().sum();
            for c in cols.clone() {
                concat[i][c] = (0..rows).map(|j| e[j] / total * v[j][c]).sum();
            }
        }
    }
    concat.iter().map(|r| linear(r, wo, None)).collect()
}

/// Token matrix before the first layer, with the same ablation rules as the
/// model: disabled priors drop out together with their position rows.
pub fn reference_tokens(frame: &Frame, params: &ModelParams) -> Mat {
    let w = &params.weights.encoder;
    let n = frame.features.shape()[0];
    let pe = to_mat(&w.positions);
    let mut rows: Vec<(Vec<f64>, usize)> = vec![(w.quality_token.data().to_vec(), 0)];
    let fw = to_mat(&w.feature_w);
    for (i, f) in to_mat(&frame.features).iter().enumerate() {
        rows.push((linear(f, &fw, Some(w.feature_b.data())), i + 1));
    }
    let ab = params.config.ablation;
    if ab.use_content_token {
        rows.push((
            linear(frame.content.data(), &to_mat(&w.content_w), Some(w.content_b.data())),
            n + 1,
        ));
    }
    if ab.use_distortion_token {
        rows.push((
            linear(
                frame.distortion.data(),
                &to_mat(&w.distortion_w),
                Some(w.distortion_b.data()),
            ),
            n + 2,
        ));
    }
    rows.into_iter()
        .map(|(r, p)| r.iter().zip(&pe[p]).map(|(a, b)| a + b).collect())
        .collect()
}

/// One post-norm layer on a token matrix.
pub fn reference_layer(z: &Mat, params: &ModelParams, index: usize) -> Mat {
    let l = &params.weights.encoder.layers[index];
    let heads = params.config.encoder.heads;
    let attn = attention(z, &to_mat(&l.wq), &to_mat(&l.wk), &to_mat(&l.wv), &to_mat(&l.wo), heads);
    let (w1, w2) = (to_mat(&l.ff_w1), to_mat(&l.ff_w2));
    z.iter()
        .zip(&attn)
        .map(|(x, a)| {
            let res: Vec<f64> = x.iter().zip(a).map(|(x, a)| x + a).collect();
            let z1 = layer_norm(&res, l.ln1_gain.data(), l.ln1_bias.data());
            let hidden: Vec<f64> = linear(&z1, &w1, Some(l.ff_b1.data())).into_iter().map(gelu).collect();
            let ff = linear(&hidden, &w2, Some(l.ff_b2.data()));
            let res: Vec<f64> = ff.iter().zip(&z1).map(|(f, z)| f + z).collect();
            layer_norm(&res, l.ln2_gain.data(), l.ln2_bias.data())
        })
        .collect()
}

/// Quality-token row of the last layer.
pub fn reference_encode(frame: &Frame, params: &ModelParams) -> Vec<f64> {
    let mut z = reference_tokens(frame, params);
    for i in 0..params.config.encoder.layers {
        z = reference_layer(&z, params, i);
    }
    z.swap_remove(0)
}

/// Unrolled GRU over a list of inputs, `h' = (1 - z) h + z h~`, then the
/// linear head. Returns the per-frame scores.
pub fn reference_scores(xs: &[Vec<f64>], params: &ModelParams) -> Vec<f64> {
    let t = &params.weights.temporal;
    let fc = to_mat(&t.fc_w);
    let fcb = t.fc_b.data()[0];
    match &t.cell {
        None => xs.iter().map(|x| linear(x, &fc, None)[0] + fcb).collect(),
        Some(c) => {
            let dh = c.b_z.numel();
            let (wz, wr, wh) = (to_mat(&c.w_z), to_mat(&c.w_r), to_mat(&c.w_h));
            let (uz, ur, uh) = (to_mat(&c.u_z), to_mat(&c.u_r), to_mat(&c.u_h));
            let mut h = vec![0.0; dh];
            let mut out = Vec::new();
            for x in xs {
                let xz = linear(x, &wz, Some(c.b_z.data()));
                let xr = linear(x, &wr, Some(c.b_r.data()));
                let xh = linear(x, &wh, Some(c.b_h.data()));
                let hz = linear(&h, &uz, None);
                let hr = linear(&h, &ur, None);
                let z: Vec<f64> = (0..dh).map(|i| sigmoid(xz[i] + hz[i])).collect();
                let r: Vec<f64> = (0..dh).map(|i| sigmoid(xr[i] + hr[i])).collect();
                let rh: Vec<f64> = (0..dh).map(|i| r[i] * h[i]).collect();
                let hh = linear(&rh, &uh, None);
                let cand: Vec<f64> = (0..dh).map(|i| (xh[i] + hh[i]).tanh()).collect();
                h = (0..dh).map(|i| (1.0 - z[i]) * h[i] + z[i] * cand[i]).collect();
                out.push(linear(&h, &fc, None)[0] + fcb);
            }
            out
        }
    }
}

/// Window minimum over the preceding `tau` frames (current excluded), by
/// linear scan; frame 0 uses itself.
pub fn reference_memory(q: &[f64], t: usize, tau: usize) -> f64 {
    if t == 0 {
        return q[0];
    }
    let lo = t.saturating_sub(tau);
    let mut best = q[lo];
    for &v in &q[lo..t] {
        if v < best {
            best = v;
        }
    }
    best
}

pub fn current_window(q: &[f64], t: usize, tau: usize) -> &[f64] {
    &q[t..(t + tau).min(q.len())]
}

pub fn reference_current(q: &[f64], t: usize, tau: usize) -> f64 {
    let win = current_window(q, t, tau);
    let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = win.iter().map(|v| (lo - v).exp()).collect();
    let total: f64 = e.iter().sum();
    win.iter().zip(&e).map(|(v, e)| v * e / total).sum()
}

pub fn reference_pool(q: &[f64], tau: usize, gamma: f64) -> f64 {
    let t = q.len();
    (0..t)
        .map(|i| gamma * reference_memory(q, i, tau) + (1.0 - gamma) * reference_current(q, i, tau))
        .sum::<f64>()
        / t as f64
}

/// Whole-video score by straight-line evaluation.
pub fn reference_predict(video: &FeatureSequence, params: &ModelParams) -> (Vec<f64>, f64) {
    let xs: Vec<Vec<f64>> = video.frames.iter().map(|f| reference_encode(f, params)).collect();
    let q = reference_scores(&xs, params);
    let c = &params.config;
    let score = if c.ablation.use_temporal_pooling {
        reference_pool(&q, c.pooling.tau, c.pooling.gamma)
    } else {
        q.iter().sum::<f64>() / q.len() as f64
    };
    (q, score)
}

// ---- metrics -------------------------------------------------------------

pub fn brute_plcc(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    cov / (sx * sy)
}

/// Rank by counting: strictly smaller values plus the mean position among
/// equal ones.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&u| u < v).count() as f64;
            let equal = x.iter().filter(|&&u| u == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_srcc(x: &[f64], y: &[f64]) -> f64 {
    brute_plcc(&brute_ranks(x), &brute_ranks(y))
}

// ---- fixtures ------------------------------------------------------------

pub fn tiny_config(layers: usize, heads: usize, width: usize, ff: usize, tokens: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        encoder: EncoderConfig {
            layers,
            heads,
            width,
            ff_width: ff,
            tokens,
            feature_width: 6,
            content_width: 5,
            distortion_width: 4,
        },
        gru_hidden: hidden,
        ..ModelConfig::default()
    }
}

pub fn random_video(config: &ModelConfig, frames: usize, mos: f64, rng: &mut SeededRng) -> FeatureSequence {
    let e = &config.encoder;
    FeatureSequence {
        id: "case".into(),
        frames: (0..frames)
            .map(|_| Frame {
                features: rng.normal_tensor(&[e.tokens, e.feature_width], 1.0),
                content: rng.normal_tensor(&[e.content_width], 1.0),
                distortion: rng.normal_tensor(&[e.distortion_width], 1.0),
            })
            .collect(),
        mos: Some(mos),
    }
}

/// Perturbs the `slot`-th weight tensor at flat index `i` by `delta`.
pub fn perturbed(params: &ModelParams, slot: usize, i: usize, delta: f64) -> ModelParams {
    let mut k = 0;
    let weights = params.weights.map(&mut |_, t| {
        let out = if k == slot {
            let mut d = t.to_vec();
            d[i] += delta;
            Tensor::new(t.shape().to_vec(), d).unwrap()
        } else {
            t.clone()
        };
        k += 1;
        out
    });
    ModelParams {
        config: params.config,
        weights,
    }
}

/// Worst elementwise relative error between the analytic gradient and
/// central differences of `loss`, with the parameter name where it occurs.
pub fn model_gradcheck(video: &FeatureSequence, params: &ModelParams, h: f64) -> (f64, String) {
    use priorformer_core::gradcheck::relative_error;
    use priorformer_core::model::{loss, loss_and_gradient};
    let (_, grad) = loss_and_gradient(video, params).unwrap();
    let mut names = Vec::new();
    params.weights.for_each(&mut |n, _| names.push(n.to_string()));
    let mut worst = (0.0, String::new());
    for (slot, g) in grad.slots().into_iter().enumerate() {
        for i in 0..g.numel() {
            let up = loss(video, &perturbed(params, slot, i, h)).unwrap();
            let down = loss(video, &perturbed(params, slot, i, -h)).unwrap();
            let fd = (up - down) / (2.0 * h);
            let err = relative_error(g.data()[i], fd);
            if err > worst.0 {
                worst = (
                    err,
                    format!("{}[{i}] analytic {} numeric {fd}", names[slot], g.data()[i]),
                );
            }
        }
    }
    worst
}
