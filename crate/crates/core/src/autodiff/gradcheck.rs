//! Central-difference verification of reverse-mode gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::store::ParamStore;
use super::tape::{forward_plain, forward_record, Tape, Var};
use crate::error::{Result, SsrError};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates probed per tensor; smaller tensors are probed exhaustively.
    pub coords_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            tol: 1e-4,
            coords_per_tensor: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub n_probed: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tol: f64,
    pub loss: f64,
    pub tensors: Vec<TensorCheck>,
    pub pass: bool,
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

fn set_coordinate(store: &mut ParamStore, name: &str, c: usize, value: f64) {
    store
        .get_mut(name)
        .expect("present")
        .as_slice_mut()
        .expect("standard layout")[c] = value;
}

fn scalar(t: &super::store::Tensor) -> Result<f64> {
    if t.ndim() != 0 {
        return Err(SsrError::shape("grad_check loss", "scalar", format!("{:?}", t.shape())));
    }
    Ok(t[[]])
}

/// Compares analytic gradients of a scalar `program` with central
/// differences on a random subsample of coordinates of every parameter.
pub fn grad_check<F>(params: &ParamStore, program: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let (value, tape, out) = forward_record(params, &program)?;
    let loss = scalar(&value)?;
    if !loss.is_finite() {
        return Err(SsrError::NonFinite(format!("loss {loss} at unperturbed parameters")));
    }
    let grads = tape.backward_scalar(out)?;
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut probe = params.clone();
    let mut tensors = Vec::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let len = params.get(&name)?.len();
        let coords: Vec<usize> = if len <= cfg.coords_per_tensor {
            (0..len).collect()
        } else {
            let mut c = sample(&mut rng, len, cfg.coords_per_tensor).into_vec();
            c.sort_unstable();
            c
        };
        let analytic = grads.get(&name).ok();
        let mut worst = (0.0f64, 0usize);
        for &c in &coords {
            let original = probe.get(&name)?.as_slice().expect("standard layout")[c];
            let mut eval = |delta: f64| -> Result<f64> {
                set_coordinate(&mut probe, &name, c, original + delta);
                let v = scalar(&forward_plain(&probe, &program)?)?;
                if !v.is_finite() {
                    return Err(SsrError::NonFinite(format!(
                        "loss {v} probing {name}[{c}] at offset {delta:e}"
                    )));
                }
                Ok(v)
            };
            let plus = eval(cfg.eps)?;
            let minus = eval(-cfg.eps)?;
            set_coordinate(&mut probe, &name, c, original);
            let numeric = (plus - minus) / (2.0 * cfg.eps);
            let a = analytic
                .map(|g| g.as_slice().expect("standard layout")[c])
                .unwrap_or(0.0);
            let err = relative_error(a, numeric);
            if err.is_nan() || err > worst.0 {
                worst = (err, c);
            }
        }
        tensors.push(TensorCheck {
            name,
            n_probed: coords.len(),
            max_rel_error: worst.0,
            worst_coordinate: worst.1,
            pass: worst.0 <= cfg.tol,
        });
    }
    let pass = tensors.iter().all(|t| t.pass);
    Ok(GradCheckReport {
        eps: cfg.eps,
        tol: cfg.tol,
        loss,
        tensors,
        pass,
    })
}
