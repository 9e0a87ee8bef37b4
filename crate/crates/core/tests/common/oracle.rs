//! Plain scalar-loop reference implementations used as test oracles.

use hostr::model::{AnswerHead, FinalPool};
use hostr::nn::{Linear, Mlp2, ParamStore};
use hostr::ostr::{GcnLayer, TemporalAttention};
use hostr::tensor::Tensor;

pub type Mat = Vec<Vec<f64>>;

pub fn rows(t: &Tensor<f64>) -> Mat {
    let s = t.shape();
    let cols = if s.len() > 1 { s[1..].iter().product() } else { 1 };
    t.data().chunks(cols.max(1)).map(<[f64]>::to_vec).collect()
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax over the entries whose mask is true; masked entries get 0 and
/// an all-masked input gives all zeros.
pub fn softmax_masked(x: &[f64], mask: &[bool]) -> Vec<f64> {
    let m = x.iter().zip(mask).filter(|(_, &k)| k).map(|(v, _)| *v).fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return vec![0.0; x.len()];
    }
    let e: Vec<f64> = x.iter().zip(mask).map(|(v, &k)| if k { (v - m).exp() } else { 0.0 }).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    softmax_masked(x, &vec![true; x.len()])
}

/// `x W + b` for one row.
pub fn linear(ps: &ParamStore<f64>, l: &Linear, x: &[f64]) -> Vec<f64> {
    let w = ps.get(l.w);
    assert_eq!(x.len(), l.fan_in);
    (0..l.fan_out)
        .map(|j| {
            let mut acc = l.b.map_or(0.0, |b| ps.get(b).data()[j]);
            for (i, xi) in x.iter().enumerate() {
                acc += xi * w.at(i, j);
            }
            acc
        })
        .collect()
}

pub fn mlp(ps: &ParamStore<f64>, m: &Mlp2, x: &[f64]) -> Vec<f64> {
    let h: Vec<f64> = linear(ps, &m.first, x).into_iter().map(elu).collect();
    linear(ps, &m.second, &h)
}

pub fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_diff_mat(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| max_diff(x, y)).fold(0.0, f64::max)
}

/// Fills every parameter of `ps` with uniform values in `[-scale, scale]`.
pub fn randomize(ps: &mut ParamStore<f64>, rng: &mut impl rand::Rng, scale: f64) {
    for t in ps.tensors_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-scale..scale);
        }
    }
}

pub fn random_mat(rng: &mut impl rand::Rng, r: usize, c: usize) -> Mat {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_rows(m).unwrap()
}

/// Query-driven temporal attention over one object: returns `(z, beta)`.
pub fn temporal_attention(ps: &ParamStore<f64>, att: &TemporalAttention, x: &Mat, mask: &[bool], q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let qp = linear(ps, &att.query, q);
    let logits: Vec<f64> = x.iter().map(|xt| linear(ps, &att.score, &hadamard(&linear(ps, &att.input, xt), &qp))[0]).collect();
    let beta = softmax_masked(&logits, mask);
    let z = (0..x[0].len()).map(|j| x.iter().zip(&beta).map(|(xt, b)| b * xt[j]).sum()).collect();
    (z, beta)
}

/// Relevance rows normalized over objects per coordinate, and `A[m][n] = <a_m, a_n>`.
pub fn adjacency(ps: &ParamStore<f64>, relevance: &Linear, z: &Mat, q: &[f64]) -> (Mat, Mat) {
    let logits: Mat = z.iter().map(|zn| linear(ps, relevance, &cat(zn, &hadamard(zn, q)))).collect();
    let d = logits[0].len();
    let mut a = vec![vec![0.0; d]; z.len()];
    for j in 0..d {
        let col: Vec<f64> = logits.iter().map(|r| r[j]).collect();
        for (n, v) in softmax(&col).into_iter().enumerate() {
            a[n][j] = v;
        }
    }
    let adj = a.iter().map(|am| a.iter().map(|an| dot(am, an)).collect()).collect();
    (a, adj)
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    a.iter().map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect()).collect()
}

pub fn gcn(ps: &ParamStore<f64>, layers: &[GcnLayer], z: &Mat, adj: &Mat) -> Mat {
    let mut h = z.clone();
    for layer in layers {
        let msg = matmul(adj, &h);
        h = h
            .iter()
            .zip(&msg)
            .map(|(hn, mn)| {
                let act: Vec<f64> = linear(ps, &layer.inner, mn).into_iter().map(elu).collect();
                let upd = linear(ps, &layer.outer, &act);
                hn.iter().zip(&upd).map(|(x, u)| elu(x + u)).collect()
            })
            .collect();
    }
    h
}

pub fn contextualize(ps: &ParamStore<f64>, m: &Mlp2, h: &Mat, c: &[f64]) -> Mat {
    h.iter().map(|hn| mlp(ps, m, &cat(hn, c))).collect()
}

/// `(delta, r)` of the final query-driven pooling over objects.
pub fn final_pool(ps: &ParamStore<f64>, pool: &FinalPool, y: &Mat, q: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let wq = linear(ps, &pool.query, q);
    let logits: Vec<f64> = y
        .iter()
        .map(|yn| {
            let wy = linear(ps, &pool.object, yn);
            mlp(ps, &pool.mlp, &cat(&wy, &hadamard(&wy, &wq)))[0]
        })
        .collect();
    let delta = softmax(&logits);
    let r = (0..y[0].len()).map(|j| y.iter().zip(&delta).map(|(yn, dn)| dn * yn[j]).sum()).collect();
    (delta, r)
}

/// Head output before the softmax (or the raw count).
pub fn head(ps: &ParamStore<f64>, h: &AnswerHead, r: &[f64], q: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = linear(ps, &h.fuse, &cat(r, &linear(ps, &h.question, q))).into_iter().map(elu).collect();
    linear(ps, &h.out, &z)
}
