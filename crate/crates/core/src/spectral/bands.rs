//! Equal-energy band partitioning and band-limited reconstruction.

use std::fmt;

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{band_energies, gft_forward, residual_energy, Spectrum};
use crate::error::{Result, SsrError};

/// Signals that are decomposed into bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Id,
    Img,
    Txt,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Id, Modality::Img, Modality::Txt];

    pub fn tag(self) -> &'static str {
        match self {
            Modality::Id => "id",
            Modality::Img => "img",
            Modality::Txt => "txt",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Contiguous grouping of retained eigenmodes into bands. Band `m` covers
/// modes `boundaries[m]..boundaries[m + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandPartition {
    pub boundaries: Vec<usize>,
    pub band_energies: Vec<f64>,
    /// The highest band also carries everything outside the retained modes.
    pub residual: bool,
    /// Set when the signal had no energy and equal-count bands were used.
    pub equal_count_fallback: bool,
}

impl BandPartition {
    pub fn n_bands(&self) -> usize {
        self.boundaries.len() - 1
    }

    pub fn modes(&self, m: usize) -> std::ops::Range<usize> {
        self.boundaries[m]..self.boundaries[m + 1]
    }

    /// Single band covering every mode and the residual.
    pub fn whole(n_modes: usize, residual: bool) -> Self {
        BandPartition {
            boundaries: vec![0, n_modes],
            band_energies: vec![0.0],
            residual,
            equal_count_fallback: false,
        }
    }
}

/// Partitions modes (in ascending-eigenvalue order) into `bands` contiguous
/// groups of roughly equal energy.
///
/// Band `m` closes at the first mode where the running energy reaches
/// `(m + 1) · total / bands`, while every later band keeps at least one mode.
/// With `residual_energy`, that energy counts toward the total and is placed
/// in the highest band.
pub fn partition_bands(
    energies: &[f64],
    bands: usize,
    residual_energy: Option<f64>,
) -> Result<BandPartition> {
    let k = energies.len();
    if bands < 2 {
        return Err(SsrError::InvalidArgument(format!("need at least 2 bands, got {bands}")));
    }
    if k < bands {
        return Err(SsrError::InvalidArgument(format!(
            "{k} modes cannot fill {bands} bands"
        )));
    }
    if let Some(e) = energies.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(SsrError::InvalidArgument(format!("invalid mode energy {e}")));
    }
    let extra = residual_energy.unwrap_or(0.0).max(0.0);
    let total = energies.iter().sum::<f64>() + extra;
    let mut boundaries = vec![0usize];
    let mut fallback = false;
    if total <= 0.0 {
        fallback = true;
        boundaries.extend((1..bands).map(|m| m * k / bands));
    } else {
        let mut cum = 0.0;
        let mut next = 0usize;
        for m in 1..bands {
            let target = m as f64 * total / bands as f64;
            let lo = boundaries[m - 1] + 1;
            let hi = k - (bands - m);
            while next < hi && (next < lo || cum < target * (1.0 - 1e-12)) {
                cum += energies[next];
                next += 1;
            }
            boundaries.push(next);
        }
    }
    boundaries.push(k);
    let mut band_energies: Vec<f64> = boundaries
        .windows(2)
        .map(|w| energies[w[0]..w[1]].iter().sum())
        .collect();
    *band_energies.last_mut().expect("bands >= 2") += extra;
    Ok(BandPartition {
        boundaries,
        band_energies,
        residual: residual_energy.is_some(),
        equal_count_fallback: fallback,
    })
}

/// Band-limited reconstruction `Σ_{k∈F_m} u_k x̂_kᵀ` of band `m` (0-based).
/// For a residual partition the highest band adds `(I − UUᵀ)X`.
pub fn reconstruct_band(
    spectrum: &Spectrum,
    x: ArrayView2<f64>,
    xhat: ArrayView2<f64>,
    partition: &BandPartition,
    m: usize,
) -> Result<Array2<f64>> {
    let bands = partition.n_bands();
    if m >= bands {
        return Err(SsrError::OutOfRange {
            context: "band index".into(),
            index: m,
            len: bands,
        });
    }
    if *partition.boundaries.last().expect("non-empty") != spectrum.n_modes()
        || xhat.nrows() != spectrum.n_modes()
    {
        return Err(SsrError::shape(
            "reconstruct_band modes",
            spectrum.n_modes(),
            xhat.nrows(),
        ));
    }
    if x.nrows() != spectrum.n_nodes() || x.ncols() != xhat.ncols() {
        return Err(SsrError::shape(
            "reconstruct_band signal",
            format!("{}x{}", spectrum.n_nodes(), xhat.ncols()),
            format!("{}x{}", x.nrows(), x.ncols()),
        ));
    }
    let r = partition.modes(m);
    let u = spectrum.eigenvectors.slice(s![.., r.clone()]);
    let mut out = u.dot(&xhat.slice(s![r, ..]));
    if partition.residual && m + 1 == bands {
        out += &x;
        out -= &spectrum.eigenvectors.dot(&xhat);
    }
    Ok(out)
}

/// Whether every modality gets its own energy partition or all share one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionScope {
    #[default]
    PerModality,
    Shared,
}

/// Per-node, per-band signal tensor `N × B × d` where the extended band axis
/// enumerates `(modality, band)` pairs modality-major.
#[derive(Debug, Clone)]
pub struct BandStack {
    pub data: Array3<f64>,
    pub band_axis_map: Vec<(Modality, usize)>,
}

impl BandStack {
    pub fn n_nodes(&self) -> usize {
        self.data.len_of(Axis(0))
    }

    pub fn n_ext_bands(&self) -> usize {
        self.data.len_of(Axis(1))
    }

    pub fn dim(&self) -> usize {
        self.data.len_of(Axis(2))
    }

    /// Extended-axis position of `(modality, band)`.
    pub fn position(&self, modality: Modality, band: usize) -> Option<usize> {
        self.band_axis_map
            .iter()
            .position(|&(c, m)| c == modality && m == band)
    }

    pub fn modalities(&self) -> Vec<Modality> {
        let mut out: Vec<Modality> = Vec::new();
        for &(c, _) in &self.band_axis_map {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    /// Sum of a modality's bands; reconstructs the original signal.
    pub fn modality_sum(&self, modality: Modality) -> Array2<f64> {
        let mut acc = Array2::zeros((self.n_nodes(), self.dim()));
        for (b, &(c, _)) in self.band_axis_map.iter().enumerate() {
            if c == modality {
                acc += &self.data.index_axis(Axis(1), b);
            }
        }
        acc
    }
}

/// Chooses the band boundaries for every signal. Signals may differ in width.
pub fn plan_partitions(
    signals: &[(Modality, ArrayView2<f64>)],
    spectrum: &Spectrum,
    bands: usize,
    scope: PartitionScope,
) -> Result<Vec<BandPartition>> {
    let energies: Vec<(Vec<f64>, Option<f64>)> = signals
        .iter()
        .map(|(_, x)| {
            let e = band_energies(gft_forward(spectrum, *x)?.view());
            let r = spectrum
                .residual_projector_present
                .then(|| residual_energy(*x, &e));
            Ok((e, r))
        })
        .collect::<Result<_>>()?;
    match scope {
        PartitionScope::PerModality => energies
            .iter()
            .map(|(e, r)| partition_bands(e, bands, *r))
            .collect(),
        PartitionScope::Shared => {
            // Each modality contributes its energy profile normalized to unit total.
            let mut pooled = vec![0.0; spectrum.n_modes()];
            let mut pooled_residual = 0.0;
            for (e, r) in &energies {
                let r = r.unwrap_or(0.0);
                let total: f64 = e.iter().sum::<f64>() + r;
                if total > 0.0 {
                    for (p, v) in pooled.iter_mut().zip(e) {
                        *p += v / total;
                    }
                    pooled_residual += r / total;
                }
            }
            let shared = partition_bands(
                &pooled,
                bands,
                spectrum.residual_projector_present.then_some(pooled_residual),
            )?;
            Ok(energies
                .iter()
                .map(|(e, r)| {
                    let mut p = shared.clone();
                    p.band_energies = p
                        .boundaries
                        .windows(2)
                        .map(|w| e[w[0]..w[1]].iter().sum())
                        .collect();
                    if let Some(r) = r {
                        *p.band_energies.last_mut().expect("bands") += r;
                    }
                    p
                })
                .collect())
        }
    }
}

/// Decomposes every modality signal into `bands` bands over a shared
/// spectrum and stacks them along the extended band axis.
pub fn build_band_stack(
    signals: &[(Modality, Array2<f64>)],
    spectrum: &Spectrum,
    bands: usize,
    scope: PartitionScope,
) -> Result<(BandStack, Vec<BandPartition>)> {
    let first = signals
        .first()
        .ok_or_else(|| SsrError::InvalidArgument("no signals to decompose".into()))?;
    let (n, d) = first.1.dim();
    for (c, x) in signals {
        if x.dim() != (n, d) {
            return Err(SsrError::shape(
                format!("band stack signal {c}"),
                format!("{n}x{d}"),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
    }
    let views: Vec<(Modality, ArrayView2<f64>)> =
        signals.iter().map(|(c, x)| (*c, x.view())).collect();
    let partitions = plan_partitions(&views, spectrum, bands, scope)?;
    let transforms: Vec<Array2<f64>> = signals
        .iter()
        .map(|(_, x)| gft_forward(spectrum, x.view()))
        .collect::<Result<_>>()?;
    let b_total = bands * signals.len();
    let mut data = Array3::zeros((n, b_total, d));
    let mut band_axis_map = Vec::with_capacity(b_total);
    for (ci, ((c, x), xhat)) in signals.iter().zip(&transforms).enumerate() {
        for m in 0..bands {
            let xb = reconstruct_band(spectrum, x.view(), xhat.view(), &partitions[ci], m)?;
            data.index_axis_mut(Axis(1), ci * bands + m).assign(&xb);
            band_axis_map.push((*c, m));
        }
    }
    Ok((BandStack { data, band_axis_map }, partitions))
}

/// One line of the band report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandReportRow {
    pub modality: Modality,
    pub band: usize,
    pub n_modes: usize,
    pub eigenvalue_lo: f64,
    pub eigenvalue_hi: f64,
    pub energy: f64,
    pub energy_fraction: f64,
}

pub fn band_report(
    spectrum: &Spectrum,
    partitions: &[(Modality, BandPartition)],
) -> Vec<BandReportRow> {
    let mut rows = Vec::new();
    for (c, p) in partitions {
        let total: f64 = p.band_energies.iter().sum();
        for m in 0..p.n_bands() {
            let r = p.modes(m);
            rows.push(BandReportRow {
                modality: *c,
                band: m,
                n_modes: r.len(),
                eigenvalue_lo: spectrum.eigenvalues[r.start],
                eigenvalue_hi: spectrum.eigenvalues[r.end - 1],
                energy: p.band_energies[m],
                energy_fraction: if total > 0.0 { p.band_energies[m] / total } else { 0.0 },
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive search over every contiguous boundary set for the one with
    /// the smallest worst-case deviation from `total / bands`.
    fn min_max_deviation_oracle(e: &[f64], bands: usize) -> Vec<usize> {
        fn rec(e: &[f64], bands: usize, cur: &mut Vec<usize>, best: &mut (f64, Vec<usize>)) {
            let k = e.len();
            let total: f64 = e.iter().sum();
            if cur.len() == bands {
                cur.push(k);
                let dev = cur
                    .windows(2)
                    .map(|w| (e[w[0]..w[1]].iter().sum::<f64>() - total / bands as f64).abs())
                    .fold(0.0, f64::max);
                if dev < best.0 {
                    *best = (dev, cur.clone());
                }
                cur.pop();
                return;
            }
            let start = cur.last().unwrap() + 1;
            let remaining = bands - cur.len();
            for b in start..=(k - remaining) {
                cur.push(b);
                rec(e, bands, cur, best);
                cur.pop();
            }
        }
        let mut best = (f64::INFINITY, vec![]);
        rec(e, bands, &mut vec![0], &mut best);
        best.1
    }

    #[test]
    fn greedy_matches_exhaustive_optimum_on_example() {
        let e = [4.0, 1.0, 1.0, 1.0, 1.0];
        let p = partition_bands(&e, 2, None).unwrap();
        assert_eq!(p.boundaries, min_max_deviation_oracle(&e, 2));
        assert_eq!(p.boundaries, vec![0, 1, 5]);
        assert_eq!(p.band_energies, vec![4.0, 4.0]);
    }

    #[test]
    fn uniform_energies_split_evenly() {
        let e = vec![1.0; 12];
        let p = partition_bands(&e, 4, None).unwrap();
        assert_eq!(p.boundaries, vec![0, 3, 6, 9, 12]);
        assert!(p.band_energies.iter().all(|&v| v == 3.0));
    }

    #[test]
    fn forced_single_mode_bands() {
        let p = partition_bands(&[1.0, 1.0, 1.0], 3, None).unwrap();
        assert_eq!(p.boundaries, vec![0, 1, 2, 3]);
    }

    #[test]
    fn every_band_keeps_a_mode_under_front_loaded_energy() {
        let p = partition_bands(&[10.0, 0.0, 0.0, 0.0], 4, None).unwrap();
        assert_eq!(p.boundaries, vec![0, 1, 2, 3, 4]);
        let p = partition_bands(&[0.0, 0.0, 0.0, 10.0], 2, None).unwrap();
        assert_eq!(p.boundaries, vec![0, 3, 4]);
    }

    #[test]
    fn zero_energy_falls_back_to_equal_counts() {
        let p = partition_bands(&[0.0; 7], 3, None).unwrap();
        assert!(p.equal_count_fallback);
        assert_eq!(p.boundaries, vec![0, 2, 4, 7]);
    }

    #[test]
    fn residual_energy_lands_in_top_band() {
        let p = partition_bands(&[2.0, 1.0, 1.0], 2, Some(4.0)).unwrap();
        assert_eq!(p.boundaries, vec![0, 2, 3]);
        assert_eq!(p.band_energies, vec![3.0, 5.0]);
        assert!(p.residual);
    }

    #[test]
    fn rejects_bad_band_counts() {
        assert!(partition_bands(&[1.0, 1.0], 3, None).is_err());
        assert!(partition_bands(&[1.0, 1.0], 1, None).is_err());
    }
}
