//! Tape operations. Each op computes its value eagerly and, on recording
//! tapes, registers a closure mapping the output gradient to parent
//! gradients.

use super::{Arr, Tape, Var};
use ndarray::{s, Array2, Array3, ArrayView2, Axis, Ix2, IxDyn};

fn as2(a: &Arr) -> ArrayView2<'_, f64> {
    a.view().into_dimensionality::<Ix2>().expect("expected 2-D value")
}

fn dyn2(a: Array2<f64>) -> Arr {
    a.into_dyn()
}

/// Row-block layout for grouped attention: query row `i` attends to key rows
/// `i*group .. (i+1)*group`.
#[derive(Clone, Copy, Debug)]
pub struct GroupedAttention {
    pub heads: usize,
    pub group: usize,
}

impl Tape {
    // ---- elementwise -------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push_op(value, vec![a, b], Box::new(|g, _, _| vec![g.clone(), g.clone()]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, _| vec![g.clone(), g.mapv(|x| -x)]),
        )
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| vec![g * p[1], g * p[0]]),
        )
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) / self.value(b);
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| {
                let da = g / p[1];
                let db = -(g * p[0]) / (p[1] * p[1]);
                vec![da, db]
            }),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).mapv(|x| x * factor);
        self.push_op(value, vec![a], Box::new(move |g, _, _| vec![g.mapv(|x| x * factor)]))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).mapv(|x| x + c);
        self.push_op(value, vec![a], Box::new(|g, _, _| vec![g.clone()]))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, p| {
                let mut d = g.clone();
                d.zip_mut_with(p[0], |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                vec![d]
            }),
        )
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push_op(
            value,
            vec![a],
            Box::new(|g, out, _| {
                let mut d = g.clone();
                d.zip_mut_with(out, |gi, &yi| *gi *= yi * (1.0 - yi));
                vec![d]
            }),
        )
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push_op(value, vec![a], Box::new(|g, out, _| vec![g * out]))
    }

    /// Natural log of entries clamped to at least `floor` (zero gradient in
    /// the clamped region).
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).mapv(|x| x.max(floor).ln());
        self.push_op(
            value,
            vec![a],
            Box::new(move |g, _, p| {
                let mut d = g.clone();
                d.zip_mut_with(p[0], |gi, &xi| {
                    *gi = if xi > floor { *gi / xi } else { 0.0 };
                });
                vec![d]
            }),
        )
    }

    pub fn sqrt_eps(&mut self, a: Var, eps: f64) -> Var {
        let value = self.value(a).mapv(|x| (x + eps).sqrt());
        self.push_op(
            value,
            vec![a],
            Box::new(|g, out, _| {
                let mut d = g.clone();
                d.zip_mut_with(out, |gi, &yi| *gi *= 0.5 / yi);
                vec![d]
            }),
        )
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::abs);
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, p| {
                let mut d = g.clone();
                d.zip_mut_with(p[0], |gi, &xi| {
                    *gi *= if xi > 0.0 {
                        1.0
                    } else if xi < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                vec![d]
            }),
        )
    }

    /// Clamp to `[lo, hi]`; gradient passes only through the interior.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(a).mapv(|x| x.clamp(lo, hi));
        self.push_op(
            value,
            vec![a],
            Box::new(move |g, _, p| {
                let mut d = g.clone();
                d.zip_mut_with(p[0], |gi, &xi| {
                    if xi < lo || xi > hi {
                        *gi = 0.0;
                    }
                });
                vec![d]
            }),
        )
    }

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn max_elem(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.zip_mut_with(self.value(b), |x, &y| *x = x.max(y));
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| {
                let mut da = g.clone();
                let mut db = g.clone();
                for ((ga, gb), (&x, &y)) in da
                    .iter_mut()
                    .zip(db.iter_mut())
                    .zip(p[0].iter().zip(p[1].iter()))
                {
                    if x >= y {
                        *gb = 0.0;
                    } else {
                        *ga = 0.0;
                    }
                }
                vec![da, db]
            }),
        )
    }

    /// Elementwise minimum; ties send the gradient to `a`.
    pub fn min_elem(&mut self, a: Var, b: Var) -> Var {
        let mut value = self.value(a).clone();
        value.zip_mut_with(self.value(b), |x, &y| *x = x.min(y));
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| {
                let mut da = g.clone();
                let mut db = g.clone();
                for ((ga, gb), (&x, &y)) in da
                    .iter_mut()
                    .zip(db.iter_mut())
                    .zip(p[0].iter().zip(p[1].iter()))
                {
                    if x <= y {
                        *gb = 0.0;
                    } else {
                        *ga = 0.0;
                    }
                }
                vec![da, db]
            }),
        )
    }

    // ---- broadcasting ------------------------------------------------

    /// `a (n x m) + row (1 x m)`, broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = dyn2(&as2(self.value(a)) + &as2(self.value(row)));
        self.push_op(
            value,
            vec![a, row],
            Box::new(|g, _, _| {
                let g2 = as2(g);
                let drow = g2.sum_axis(Axis(0)).insert_axis(Axis(0));
                vec![g.clone(), drow.into_dyn()]
            }),
        )
    }

    /// `a (n x m) * col (n x 1)`, broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let value = dyn2(&as2(self.value(a)) * &as2(self.value(col)));
        self.push_op(
            value,
            vec![a, col],
            Box::new(|g, _, p| {
                let g2 = as2(g);
                let da = dyn2(&g2 * &as2(p[1]));
                let dcol = (&g2 * &as2(p[0])).sum_axis(Axis(1)).insert_axis(Axis(1));
                vec![da, dcol.into_dyn()]
            }),
        )
    }

    /// `a (n x m) / col (n x 1)`, broadcast over columns.
    pub fn div_col(&mut self, a: Var, col: Var) -> Var {
        let value = dyn2(&as2(self.value(a)) / &as2(self.value(col)));
        self.push_op(
            value,
            vec![a, col],
            Box::new(|g, _, p| {
                let g2 = as2(g);
                let c = as2(p[1]);
                let da = dyn2(&g2 / &c);
                let num = (&g2 * &as2(p[0])).sum_axis(Axis(1)).insert_axis(Axis(1));
                let dcol = -(num / (&c * &c));
                vec![da, dcol.into_dyn()]
            }),
        )
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = dyn2(as2(self.value(a)).dot(&as2(self.value(b))));
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| {
                let g2 = as2(g);
                let da = g2.dot(&as2(p[1]).t());
                let db = as2(p[0]).t().dot(&g2);
                vec![dyn2(da), dyn2(db)]
            }),
        )
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = dyn2(as2(self.value(a)).dot(&as2(self.value(b)).t()));
        self.push_op(
            value,
            vec![a, b],
            Box::new(|g, _, p| {
                let g2 = as2(g);
                let da = g2.dot(&as2(p[1]));
                let db = g2.t().dot(&as2(p[0]));
                vec![dyn2(da), dyn2(db)]
            }),
        )
    }

    // ---- reductions ----------------------------------------------------

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Arr::from_elem(IxDyn(&[1, 1]), self.value(a).sum());
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, p| {
                let gv = *g.iter().next().unwrap();
                vec![Arr::from_elem(p[0].raw_dim(), gv)]
            }),
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Column sums: `(n x m) -> (1 x m)`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let value = as2(self.value(a)).sum_axis(Axis(0)).insert_axis(Axis(0)).into_dyn();
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, p| {
                let n = p[0].shape()[0];
                let g2 = as2(g);
                let mut d = Array2::zeros((n, g2.shape()[1]));
                for mut row in d.rows_mut() {
                    row.assign(&g2.row(0));
                }
                vec![dyn2(d)]
            }),
        )
    }

    /// Row sums: `(n x m) -> (n x 1)`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let value = as2(self.value(a)).sum_axis(Axis(1)).insert_axis(Axis(1)).into_dyn();
        self.push_op(
            value,
            vec![a],
            Box::new(|g, _, p| {
                let m = p[0].shape()[1];
                let g2 = as2(g);
                let mut d = Array2::zeros((g2.shape()[0], m));
                for (mut row, &gv) in d.rows_mut().into_iter().zip(g2.column(0)) {
                    row.fill(gv);
                }
                vec![dyn2(d)]
            }),
        )
    }

    // ---- shape ----------------------------------------------------------

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| as2(self.value(*v))).collect();
        let widths: Vec<usize> = views.iter().map(|v| v.shape()[1]).collect();
        let value = dyn2(ndarray::concatenate(Axis(1), &views).expect("concat_cols"));
        self.push_op(
            value,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let g2 = as2(g);
                let mut out = Vec::with_capacity(widths.len());
                let mut start = 0;
                for &w in &widths {
                    out.push(dyn2(g2.slice(s![.., start..start + w]).to_owned()));
                    start += w;
                }
                out
            }),
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|v| as2(self.value(*v))).collect();
        let heights: Vec<usize> = views.iter().map(|v| v.shape()[0]).collect();
        let value = dyn2(ndarray::concatenate(Axis(0), &views).expect("concat_rows"));
        self.push_op(
            value,
            parts.to_vec(),
            Box::new(move |g, _, _| {
                let g2 = as2(g);
                let mut out = Vec::with_capacity(heights.len());
                let mut start = 0;
                for &h in &heights {
                    out.push(dyn2(g2.slice(s![start..start + h, ..]).to_owned()));
                    start += h;
                }
                out
            }),
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = dyn2(as2(self.value(a)).slice(s![.., start..start + len]).to_owned());
        self.push_op(
            value,
            vec![a],
            Box::new(move |g, _, p| {
                let shape = (p[0].shape()[0], p[0].shape()[1]);
                let mut d = Array2::zeros(shape);
                d.slice_mut(s![.., start..start + len]).assign(&as2(g));
                vec![dyn2(d)]
            }),
        )
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Var {
        let a2 = as2(self.value(a));
        let mut value = Array2::zeros((indices.len(), a2.shape()[1]));
        for (mut row, &i) in value.rows_mut().into_iter().zip(indices) {
            row.assign(&a2.row(i));
        }
        let idx = indices.to_vec();
        self.push_op(
            dyn2(value),
            vec![a],
            Box::new(move |g, _, p| {
                let g2 = as2(g);
                let mut d = Array2::zeros((p[0].shape()[0], p[0].shape()[1]));
                for (row, &i) in g2.rows().into_iter().zip(&idx) {
                    let mut target = d.row_mut(i);
                    target += &row;
                }
                vec![dyn2(d)]
            }),
        )
    }

    // ---- normalization ---------------------------------------------------

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let a2 = as2(self.value(a));
        let mut value = a2.to_owned();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push_op(
            dyn2(value),
            vec![a],
            Box::new(|g, out, _| {
                let g2 = as2(g);
                let y = as2(out);
                let mut d = (&g2 * &y).to_owned();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = drow.sum();
                    ndarray::Zip::from(&mut drow).and(&yrow).for_each(|di, &yi| {
                        *di -= dot * yi;
                    });
                }
                vec![dyn2(d)]
            }),
        )
    }

    /// LayerNorm over each row with learnable gain/bias of shape `1 x m`.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let a2 = as2(self.value(a));
        let gain2 = as2(self.value(gain)).row(0).to_owned();
        let bias2 = as2(self.value(bias)).row(0).to_owned();
        let m = a2.shape()[1] as f64;
        let mut value = a2.to_owned();
        for mut row in value.rows_mut() {
            let mean = row.sum() / m;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
            let inv = 1.0 / (var + eps).sqrt();
            for (x, (&g, &b)) in row.iter_mut().zip(gain2.iter().zip(bias2.iter())) {
                *x = (*x - mean) * inv * g + b;
            }
        }
        self.push_op(
            dyn2(value),
            vec![a, gain, bias],
            Box::new(move |g, _, p| {
                let x = as2(p[0]);
                let gn = as2(p[1]).row(0).to_owned();
                let g2 = as2(g);
                let m = x.shape()[1] as f64;
                let mut dx = Array2::zeros((x.shape()[0], x.shape()[1]));
                let mut dgain = Array2::zeros((1, x.shape()[1]));
                let mut dbias = Array2::zeros((1, x.shape()[1]));
                for i in 0..x.shape()[0] {
                    let row = x.row(i);
                    let mean = row.sum() / m;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
                    let inv = 1.0 / (var + eps).sqrt();
                    let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
                    let grow = g2.row(i);
                    let mut sum_gg = 0.0;
                    let mut sum_ggx = 0.0;
                    for j in 0..x.shape()[1] {
                        let gg = grow[j] * gn[j];
                        sum_gg += gg;
                        sum_ggx += gg * xhat[j];
                        dgain[[0, j]] += grow[j] * xhat[j];
                        dbias[[0, j]] += grow[j];
                    }
                    for j in 0..x.shape()[1] {
                        let gg = grow[j] * gn[j];
                        dx[[i, j]] = inv * (gg - sum_gg / m - xhat[j] * sum_ggx / m);
                    }
                }
                vec![dyn2(dx), dyn2(dgain), dyn2(dbias)]
            }),
        )
    }

    // ---- attention --------------------------------------------------------

    /// Scaled dot-product attention over already-projected q/k/v, split into
    /// `heads` column blocks. Softmax weights are captured for backward.
    pub fn attention_core(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let q2 = as2(self.value(q));
        let k2 = as2(self.value(k));
        let v2 = as2(self.value(v));
        let (n, d) = (q2.shape()[0], q2.shape()[1]);
        let m = k2.shape()[0];
        assert_eq!(d % heads, 0, "hidden size not divisible by heads");
        let hd = d / heads;
        let scale = (hd as f64).powf(-0.5);

        let mut out = Array2::zeros((n, d));
        let mut attn = Array3::zeros((heads, n, m));
        for t in 0..heads {
            let cols = t * hd..(t + 1) * hd;
            let qh = q2.slice(s![.., cols.clone()]);
            let kh = k2.slice(s![.., cols.clone()]);
            let vh = v2.slice(s![.., cols.clone()]);
            let mut scores = qh.dot(&kh.t());
            scores.mapv_inplace(|x| x * scale);
            for mut row in scores.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|x| (x - max).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);
            }
            out.slice_mut(s![.., cols]).assign(&scores.dot(&vh));
            attn.slice_mut(s![t, .., ..]).assign(&scores);
        }

        self.push_op(
            dyn2(out),
            vec![q, k, v],
            Box::new(move |g, _, p| {
                let g2 = as2(g);
                let q2 = as2(p[0]);
                let k2 = as2(p[1]);
                let v2 = as2(p[2]);
                let mut dq = Array2::zeros((n, d));
                let mut dk = Array2::zeros((m, d));
                let mut dv = Array2::zeros((m, d));
                for t in 0..heads {
                    let cols = t * hd..(t + 1) * hd;
                    let a = attn.slice(s![t, .., ..]);
                    let dout = g2.slice(s![.., cols.clone()]);
                    let vh = v2.slice(s![.., cols.clone()]);
                    dv.slice_mut(s![.., cols.clone()]).assign(&a.t().dot(&dout));
                    let da = dout.dot(&vh.t());
                    let mut ds = (&da * &a).to_owned();
                    for (mut dsrow, arow) in ds.rows_mut().into_iter().zip(a.rows()) {
                        let dot = dsrow.sum();
                        ndarray::Zip::from(&mut dsrow).and(&arow).for_each(|x, &ai| {
                            *x -= dot * ai;
                        });
                    }
                    ds.mapv_inplace(|x| x * scale);
                    dq.slice_mut(s![.., cols.clone()])
                        .assign(&ds.dot(&k2.slice(s![.., cols.clone()])));
                    dk.slice_mut(s![.., cols.clone()])
                        .assign(&ds.t().dot(&q2.slice(s![.., cols])));
                }
                vec![dyn2(dq), dyn2(dk), dyn2(dv)]
            }),
        )
    }

    /// Block-diagonal attention: query row `i` attends only to key/value rows
    /// `i*g .. (i+1)*g`. Keys/values have shape `(n*g) x d`.
    pub fn attention_grouped(&mut self, q: Var, k: Var, v: Var, cfg: GroupedAttention) -> Var {
        let q2 = as2(self.value(q));
        let k2 = as2(self.value(k));
        let v2 = as2(self.value(v));
        let (n, d) = (q2.shape()[0], q2.shape()[1]);
        let (heads, grp) = (cfg.heads, cfg.group);
        assert_eq!(k2.shape()[0], n * grp, "grouped keys must be (n*group) x d");
        assert_eq!(d % heads, 0);
        let hd = d / heads;
        let scale = (hd as f64).powf(-0.5);

        let mut out = Array2::zeros((n, d));
        let mut attn = Array3::zeros((heads, n, grp));
        for t in 0..heads {
            let cols = t * hd..(t + 1) * hd;
            for i in 0..n {
                let rows = i * grp..(i + 1) * grp;
                let qh = q2.slice(s![i, cols.clone()]);
                let kh = k2.slice(s![rows.clone(), cols.clone()]);
                let vh = v2.slice(s![rows, cols.clone()]);
                let mut scores: Vec<f64> =
                    kh.rows().into_iter().map(|kr| kr.dot(&qh) * scale).collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for sc in scores.iter_mut() {
                    *sc = (*sc - max).exp();
                    sum += *sc;
                }
                for sc in scores.iter_mut() {
                    *sc /= sum;
                }
                let mut acc = ndarray::Array1::zeros(hd);
                for (w, vr) in scores.iter().zip(vh.rows()) {
                    acc.scaled_add(*w, &vr);
                }
                out.slice_mut(s![i, cols.clone()]).assign(&acc);
                for (j, w) in scores.iter().enumerate() {
                    attn[[t, i, j]] = *w;
                }
            }
        }

        self.push_op(
            dyn2(out),
            vec![q, k, v],
            Box::new(move |g, _, p| {
                let g2 = as2(g);
                let q2 = as2(p[0]);
                let k2 = as2(p[1]);
                let v2 = as2(p[2]);
                let mut dq = Array2::zeros((n, d));
                let mut dk = Array2::zeros((n * grp, d));
                let mut dv = Array2::zeros((n * grp, d));
                for t in 0..heads {
                    let cols = t * hd..(t + 1) * hd;
                    for i in 0..n {
                        let rows = i * grp..(i + 1) * grp;
                        let a = attn.slice(s![t, i, ..]);
                        let dout = g2.slice(s![i, cols.clone()]);
                        let vh = v2.slice(s![rows.clone(), cols.clone()]);
                        let kh = k2.slice(s![rows.clone(), cols.clone()]);
                        let qh = q2.slice(s![i, cols.clone()]);
                        // dv rows, da entries
                        let mut da = ndarray::Array1::zeros(grp);
                        for (j, vr) in vh.rows().into_iter().enumerate() {
                            da[j] = vr.dot(&dout);
                            let mut dvr = dv.slice_mut(s![i * grp + j, cols.clone()]);
                            dvr.scaled_add(a[j], &dout);
                        }
                        let dot: f64 = da.iter().zip(a.iter()).map(|(x, y)| x * y).sum();
                        let ds: Vec<f64> =
                            (0..grp).map(|j| a[j] * (da[j] - dot) * scale).collect();
                        let mut dqh = ndarray::Array1::zeros(hd);
                        for (j, kr) in kh.rows().into_iter().enumerate() {
                            dqh.scaled_add(ds[j], &kr);
                            let mut dkr = dk.slice_mut(s![i * grp + j, cols.clone()]);
                            dkr.scaled_add(ds[j], &qh);
                        }
                        let mut dqrow = dq.slice_mut(s![i, cols.clone()]);
                        dqrow += &dqh;
                    }
                }
                vec![dyn2(dq), dyn2(dk), dyn2(dv)]
            }),
        )
    }

    // ---- convolution -------------------------------------------------------

    /// 2-D convolution on a spatial-major feature map.
    ///
    /// `input` is `(h*w) x c_in`, `weight` is `(c_in*kh*kw) x c_out` with the
    /// row index laid out as `c*kh*kw + ky*kw + kx`, `bias` is `1 x c_out`.
    /// Output is `(h_out*w_out) x c_out`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        h: usize,
        w: usize,
        ksize: usize,
        stride: usize,
        pad: usize,
    ) -> Var {
        let x = as2(self.value(input));
        let c_in = x.shape()[1];
        assert_eq!(x.shape()[0], h * w, "input rows must equal h*w");
        let h_out = (h + 2 * pad - ksize) / stride + 1;
        let w_out = (w + 2 * pad - ksize) / stride + 1;

        let cols = im2col(&x, h, w, c_in, ksize, stride, pad, h_out, w_out);
        let wmat = as2(self.value(weight));
        let brow = as2(self.value(bias)).row(0).to_owned();
        let mut out = cols.dot(&wmat);
        for mut row in out.rows_mut() {
            row += &brow;
        }

        self.push_op(
            dyn2(out),
            vec![input, weight, bias],
            Box::new(move |g, _, p| {
                let g2 = as2(g);
                let wmat = as2(p[1]);
                let dw = cols.t().dot(&g2);
                let db = g2.sum_axis(Axis(0)).insert_axis(Axis(0));
                let dcols = g2.dot(&wmat.t());
                let dx = col2im(&dcols.view(), h, w, c_in, ksize, stride, pad, h_out, w_out);
                vec![dyn2(dx), dyn2(dw), db.into_dyn()]
            }),
        )
    }

    // ---- region pooling ------------------------------------------------------

    /// Bilinear region pooling of a spatial-major feature map.
    ///
    /// `features` is `(h*w) x d`; `boxes` is `n x 4` center-format normalized
    /// boxes. For each box an `r x r` grid of points is sampled (one bilinear
    /// sample per cell center); output row `i*r*r + gy*r + gx` holds the
    /// sample for box `i`, cell `(gy, gx)`. Gradients flow to the feature map
    /// and to the box coordinates. Sample coordinates are clamped to the
    /// feature border, where the coordinate gradient vanishes.
    pub fn roi_align(&mut self, features: Var, boxes: Var, h: usize, w: usize, r: usize) -> Var {
        let z = as2(self.value(features));
        let b = as2(self.value(boxes));
        assert_eq!(z.shape()[0], h * w);
        assert_eq!(b.shape()[1], 4);
        let n = b.shape()[0];
        let d = z.shape()[1];

        let mut out = Array2::zeros((n * r * r, d));
        for i in 0..n {
            let (cx, cy, bw, bh) = (b[[i, 0]], b[[i, 1]], b[[i, 2]], b[[i, 3]]);
            for gy in 0..r {
                for gx in 0..r {
                    let xn = (cx - bw / 2.0) + (gx as f64 + 0.5) * bw / r as f64;
                    let yn = (cy - bh / 2.0) + (gy as f64 + 0.5) * bh / r as f64;
                    let sample = BilinearSample::at(xn, yn, h, w);
                    let mut row = out.row_mut(i * r * r + gy * r + gx);
                    for (weight, idx) in sample.taps() {
                        row.scaled_add(weight, &z.row(idx));
                    }
                }
            }
        }

        self.push_op(
            dyn2(out),
            vec![features, boxes],
            Box::new(move |g, _, p| {
                let z = as2(p[0]);
                let b = as2(p[1]);
                let g2 = as2(g);
                let mut dz = Array2::zeros((h * w, d));
                let mut db = Array2::zeros((n, 4));
                for i in 0..n {
                    let (cx, cy, bw, bh) = (b[[i, 0]], b[[i, 1]], b[[i, 2]], b[[i, 3]]);
                    for gy in 0..r {
                        for gx in 0..r {
                            let fx_cell = (gx as f64 + 0.5) / r as f64;
                            let fy_cell = (gy as f64 + 0.5) / r as f64;
                            let xn = (cx - bw / 2.0) + fx_cell * bw;
                            let yn = (cy - bh / 2.0) + fy_cell * bh;
                            let sample = BilinearSample::at(xn, yn, h, w);
                            let grow = g2.row(i * r * r + gy * r + gx);
                            for (weight, idx) in sample.taps() {
                                let mut target = dz.row_mut(idx);
                                target.scaled_add(weight, &grow);
                            }
                            // chain rule through the sample coordinates
                            let (dvx, dvy) = sample.coord_grads(&z, &grow);
                            // xn depends on cx and bw; yn on cy and bh
                            db[[i, 0]] += dvx;
                            db[[i, 2]] += dvx * (fx_cell - 0.5);
                            db[[i, 1]] += dvy;
                            db[[i, 3]] += dvy * (fy_cell - 0.5);
                        }
                    }
                }
                vec![dyn2(dz), dyn2(db)]
            }),
        )
    }

    // ---- regularization -------------------------------------------------------

    /// Inverted dropout with an explicit pre-drawn mask of zeros and ones.
    pub fn dropout_with_mask(&mut self, a: Var, mask: Array2<f64>, rate: f64) -> Var {
        let keep = 1.0 - rate;
        let scaled = mask.mapv(|m| m / keep);
        let value = dyn2(&as2(self.value(a)) * &scaled);
        self.push_op(
            value,
            vec![a],
            Box::new(move |g, _, _| vec![dyn2(&as2(g) * &scaled)]),
        )
    }

    // ---- losses ------------------------------------------------------------

    /// Weighted negative log-likelihood from probabilities:
    /// `sum_i w_i * (-ln max(p[i, t_i], 1e-12))`.
    pub fn nll_from_probs(&mut self, probs: Var, targets: &[usize], weights: &[f64]) -> Var {
        assert_eq!(targets.len(), as2(self.value(probs)).shape()[0]);
        assert_eq!(targets.len(), weights.len());
        let p2 = as2(self.value(probs));
        let floor = 1e-12;
        let mut total = 0.0;
        for (i, (&t, &w)) in targets.iter().zip(weights).enumerate() {
            total -= w * p2[[i, t]].max(floor).ln();
        }
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        self.push_op(
            Arr::from_elem(IxDyn(&[1, 1]), total),
            vec![probs],
            Box::new(move |g, _, p| {
                let gv = *g.iter().next().unwrap();
                let p2 = as2(p[0]);
                let mut d = Array2::zeros((p2.shape()[0], p2.shape()[1]));
                for (i, (&t, &w)) in targets.iter().zip(&weights).enumerate() {
                    let pv = p2[[i, t]];
                    if pv > floor {
                        d[[i, t]] = -gv * w / pv;
                    }
                }
                vec![dyn2(d)]
            }),
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    x: &ArrayView2<f64>,
    h: usize,
    w: usize,
    c_in: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
) -> Array2<f64> {
    let mut cols = Array2::zeros((h_out * w_out, c_in * ksize * ksize));
    for oy in 0..h_out {
        for ox in 0..w_out {
            let orow = oy * w_out + ox;
            for ky in 0..ksize {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..ksize {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let irow = iy as usize * w + ix as usize;
                    for c in 0..c_in {
                        cols[[orow, c * ksize * ksize + ky * ksize + kx]] = x[[irow, c]];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &ArrayView2<f64>,
    h: usize,
    w: usize,
    c_in: usize,
    ksize: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
) -> Array2<f64> {
    let mut dx = Array2::zeros((h * w, c_in));
    for oy in 0..h_out {
        for ox in 0..w_out {
            let orow = oy * w_out + ox;
            for ky in 0..ksize {
                let iy = (oy * stride + ky) as isize - pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..ksize {
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let irow = iy as usize * w + ix as usize;
                    for c in 0..c_in {
                        dx[[irow, c]] += dcols[[orow, c * ksize * ksize + ky * ksize + kx]];
                    }
                }
            }
        }
    }
    dx
}

/// One bilinear sample on a spatial-major map: the four corner taps plus the
/// local fractions, with border clamping.
struct BilinearSample {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    tx: f64,
    ty: f64,
    dx_active: bool,
    dy_active: bool,
    w: usize,
    h: usize,
}

impl BilinearSample {
    fn at(xn: f64, yn: f64, h: usize, w: usize) -> Self {
        let fx = xn * w as f64 - 0.5;
        let fy = yn * h as f64 - 0.5;
        let (x0, x1, tx, dx_active) = Self::axis(fx, w);
        let (y0, y1, ty, dy_active) = Self::axis(fy, h);
        BilinearSample { x0, x1, y0, y1, tx, ty, dx_active, dy_active, w, h }
    }

    fn axis(f: f64, extent: usize) -> (usize, usize, f64, bool) {
        if extent == 1 {
            return (0, 0, 0.0, false);
        }
        let hi = (extent - 1) as f64;
        let active = f > 0.0 && f < hi;
        let fc = f.clamp(0.0, hi);
        let i0 = (fc.floor() as usize).min(extent - 2);
        (i0, i0 + 1, fc - i0 as f64, active)
    }

    fn taps(&self) -> [(f64, usize); 4] {
        let (tx, ty) = (self.tx, self.ty);
        [
            ((1.0 - tx) * (1.0 - ty), self.y0 * self.w + self.x0),
            (tx * (1.0 - ty), self.y0 * self.w + self.x1),
            ((1.0 - tx) * ty, self.y1 * self.w + self.x0),
            (tx * ty, self.y1 * self.w + self.x1),
        ]
    }

    /// Gradients of `grad_row . value` w.r.t. the normalized sample
    /// coordinates (already including the feature-grid scaling).
    fn coord_grads(
        &self,
        z: &ArrayView2<f64>,
        grad_row: &ndarray::ArrayView1<f64>,
    ) -> (f64, f64) {
        let r00 = z.row(self.y0 * self.w + self.x0);
        let r01 = z.row(self.y0 * self.w + self.x1);
        let r10 = z.row(self.y1 * self.w + self.x0);
        let r11 = z.row(self.y1 * self.w + self.x1);
        let mut dvdtx = 0.0;
        let mut dvdty = 0.0;
        for (((&g, (&a, &b)), &c), &e) in grad_row
            .iter()
            .zip(r00.iter().zip(r01.iter()))
            .zip(r10.iter())
            .zip(r11.iter())
        {
            dvdtx += g * ((1.0 - self.ty) * (b - a) + self.ty * (e - c));
            dvdty += g * ((1.0 - self.tx) * (c - a) + self.tx * (e - b));
        }
        let h_scale = if self.dy_active { 1.0 } else { 0.0 };
        let w_scale = if self.dx_active { 1.0 } else { 0.0 };
        // d(grid coord)/d(normalized coord) = extent
        (dvdtx * w_scale * self.w as f64, dvdty * h_scale * self.h as f64)
    }
}
