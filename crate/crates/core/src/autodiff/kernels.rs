//! Dense kernels for the band-axis contractions used by the cross-band
//! operator. Shared by the recorded and plain forward paths so both produce
//! identical numbers.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3, Axis};

/// `y[n, j, f] = Σ_b x[n, b, f] · w[b, j]`.
pub fn mode_product(x: ArrayView3<f64>, w: ArrayView2<f64>) -> Array3<f64> {
    let (n, _, f) = x.dim();
    let j = w.ncols();
    let wt = w.t();
    let mut y = Array3::zeros((n, j, f));
    for (mut yn, xn) in y.outer_iter_mut().zip(x.outer_iter()) {
        yn.assign(&wt.dot(&xn));
    }
    y
}

/// Adjoint of [`mode_product`]: returns `(dx, dw)` for upstream `g[n, j, f]`.
pub fn mode_product_backward(
    x: ArrayView3<f64>,
    w: ArrayView2<f64>,
    g: ArrayView3<f64>,
) -> (Array3<f64>, Array2<f64>) {
    let mut dx = Array3::zeros(x.raw_dim());
    let mut dw = Array2::zeros(w.raw_dim());
    for ((mut dxn, xn), gn) in dx.outer_iter_mut().zip(x.outer_iter()).zip(g.outer_iter()) {
        dxn.assign(&w.dot(&gn));
        dw += &xn.dot(&gn.t());
    }
    (dx, dw)
}

/// `y[n, i, e] = Σ_f v[i, e, f] · q[n, i, f]`: applies core `V⁽ⁱ⁾` to slice `i`.
pub fn core_apply(v: ArrayView3<f64>, q: ArrayView3<f64>) -> Array3<f64> {
    let (n, r, _) = q.dim();
    let e = v.len_of(Axis(1));
    let mut y = Array3::zeros((n, r, e));
    for i in 0..r {
        let qi = q.slice(s![.., i, ..]);
        let vi = v.index_axis(Axis(0), i);
        y.slice_mut(s![.., i, ..]).assign(&qi.dot(&vi.t()));
    }
    y
}

/// Adjoint of [`core_apply`]: returns `(dv, dq)` for upstream `g[n, i, e]`.
pub fn core_apply_backward(
    v: ArrayView3<f64>,
    q: ArrayView3<f64>,
    g: ArrayView3<f64>,
) -> (Array3<f64>, Array3<f64>) {
    let r = q.len_of(Axis(1));
    let mut dv = Array3::zeros(v.raw_dim());
    let mut dq = Array3::zeros(q.raw_dim());
    for i in 0..r {
        let gi = g.slice(s![.., i, ..]);
        let qi = q.slice(s![.., i, ..]);
        let vi = v.index_axis(Axis(0), i);
        dq.slice_mut(s![.., i, ..]).assign(&gi.dot(&vi));
        dv.index_axis_mut(Axis(0), i).assign(&gi.t().dot(&qi));
    }
    (dv, dq)
}
