use ndarray::{s, Array1, Array2, ArrayView2};

use super::params::ModelShape;
use crate::error::{Result, SsrError};
use crate::graph::{propagate_features, BipartiteGraph};
use crate::spectral::{
    gft_forward, plan_partitions, reconstruct_band, BandPartition, Modality, PartitionScope,
    Spectrum,
};

/// Everything the forward pass needs that does not change during training:
/// eigenvector blocks for the ID bands, pre-split content bands and the
/// degree feature for the structural gate.
#[derive(Debug, Clone)]
pub struct SpectralInputs {
    pub n_users: usize,
    pub n_items: usize,
    pub bands: usize,
    /// `(U_m, U_mᵀ)` per band; empty when signals are not decomposed.
    id_bases: Vec<(Array2<f64>, Array2<f64>)>,
    id_residual: bool,
    /// Band components of the node-level raw content features.
    content: Vec<(Modality, Vec<Array2<f64>>)>,
    pub partitions: Vec<(Modality, BandPartition)>,
    pub log_degree: Array1<f64>,
}

fn check_content(shape: &ModelShape, item_features: &[(Modality, ArrayView2<f64>)]) -> Result<()> {
    if item_features.len() != shape.content.len() {
        return Err(SsrError::shape(
            "content modalities",
            shape.content.len(),
            item_features.len(),
        ));
    }
    for ((c, x), (ec, dc)) in item_features.iter().zip(&shape.content) {
        if c != ec || x.ncols() != *dc || x.nrows() != shape.n_items {
            return Err(SsrError::shape(
                format!("{ec} features"),
                format!("{}x{dc}", shape.n_items),
                format!("{c}: {}x{}", x.nrows(), x.ncols()),
            ));
        }
    }
    Ok(())
}

fn lift(
    graph: &BipartiteGraph,
    item_features: &[(Modality, ArrayView2<f64>)],
) -> Result<Vec<(Modality, Array2<f64>)>> {
    item_features
        .iter()
        .map(|(c, x)| Ok((*c, propagate_features(graph, *x)?)))
        .collect()
}

impl SpectralInputs {
    /// Picks band boundaries for the ID signal (from `id_signal`, normally the
    /// initial embeddings) and every content signal.
    pub fn plan(
        graph: &BipartiteGraph,
        spectrum: Option<&Spectrum>,
        shape: &ModelShape,
        scope: PartitionScope,
        item_features: &[(Modality, ArrayView2<f64>)],
        id_signal: ArrayView2<f64>,
    ) -> Result<Vec<(Modality, BandPartition)>> {
        check_content(shape, item_features)?;
        let lifted = lift(graph, item_features)?;
        let mut signals = vec![(Modality::Id, id_signal)];
        signals.extend(lifted.iter().map(|(c, x)| (*c, x.view())));
        let partitions = match spectrum {
            Some(sp) => plan_partitions(&signals, sp, shape.bands, scope)?,
            None => {
                if shape.bands != 1 {
                    return Err(SsrError::InvalidArgument(
                        "multiple bands require a spectrum".into(),
                    ));
                }
                signals
                    .iter()
                    .map(|_| BandPartition::whole(graph.n_nodes(), false))
                    .collect()
            }
        };
        Ok(signals.iter().map(|(c, _)| *c).zip(partitions).collect())
    }

    /// Precomputes band blocks for fixed partitions.
    pub fn assemble(
        graph: &BipartiteGraph,
        spectrum: Option<&Spectrum>,
        shape: &ModelShape,
        item_features: &[(Modality, ArrayView2<f64>)],
        partitions: Vec<(Modality, BandPartition)>,
    ) -> Result<Self> {
        check_content(shape, item_features)?;
        let expected = shape.modalities();
        let got: Vec<Modality> = partitions.iter().map(|(c, _)| *c).collect();
        if got != expected {
            return Err(SsrError::InvalidArgument(format!(
                "partitions for {got:?}, model uses {expected:?}"
            )));
        }
        if partitions.iter().any(|(_, p)| p.n_bands() != shape.bands) {
            return Err(SsrError::InvalidArgument(format!(
                "every partition must have {} bands",
                shape.bands
            )));
        }
        let n = graph.n_nodes();
        if n != shape.n_nodes() {
            return Err(SsrError::shape("graph nodes", shape.n_nodes(), n));
        }
        let lifted = lift(graph, item_features)?;
        let (id_bases, id_residual, content) = match spectrum {
            None => {
                let content = lifted.into_iter().map(|(c, x)| (c, vec![x])).collect();
                (Vec::new(), false, content)
            }
            Some(sp) => {
                if sp.n_nodes() != n {
                    return Err(SsrError::shape("spectrum nodes", n, sp.n_nodes()));
                }
                let id = &partitions[0].1;
                if *id.boundaries.last().expect("bands") != sp.n_modes() {
                    return Err(SsrError::shape(
                        "partition modes",
                        sp.n_modes(),
                        *id.boundaries.last().expect("bands"),
                    ));
                }
                let bases = (0..shape.bands)
                    .map(|m| {
                        let u = sp.eigenvectors.slice(s![.., id.modes(m)]).to_owned();
                        let ut = u.t().as_standard_layout().into_owned();
                        (u, ut)
                    })
                    .collect();
                let mut content = Vec::new();
                for ((c, x), (_, p)) in lifted.iter().zip(&partitions[1..]) {
                    let xhat = gft_forward(sp, x.view())?;
                    let bands = (0..shape.bands)
                        .map(|m| reconstruct_band(sp, x.view(), xhat.view(), p, m))
                        .collect::<Result<Vec<_>>>()?;
                    content.push((*c, bands));
                }
                (bases, id.residual, content)
            }
        };
        Ok(SpectralInputs {
            n_users: graph.n_users,
            n_items: graph.n_items,
            bands: shape.bands,
            id_bases,
            id_residual,
            content,
            partitions,
            log_degree: graph.standardized_log_degree(),
        })
    }

    pub fn prepare(
        graph: &BipartiteGraph,
        spectrum: Option<&Spectrum>,
        shape: &ModelShape,
        scope: PartitionScope,
        item_features: &[(Modality, ArrayView2<f64>)],
        id_signal: ArrayView2<f64>,
    ) -> Result<Self> {
        let partitions = Self::plan(graph, spectrum, shape, scope, item_features, id_signal)?;
        Self::assemble(graph, spectrum, shape, item_features, partitions)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn is_spectral(&self) -> bool {
        !self.id_bases.is_empty()
    }

    pub(crate) fn id_bases(&self) -> &[(Array2<f64>, Array2<f64>)] {
        &self.id_bases
    }

    pub(crate) fn id_residual(&self) -> bool {
        self.id_residual
    }

    pub(crate) fn content(&self) -> &[(Modality, Vec<Array2<f64>>)] {
        &self.content
    }
}
