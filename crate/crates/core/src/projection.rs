//! Hyperbolic message-passing relation projection.
//!
//! Given a fuzzy set `x` and a relation `r`, every entity starts from
//! `h⁰_v = x_v · q_r` in the tangent space at the origin. Layer `t` maps the
//! states to the tangent space at curvature `c_{t-1}`, sends relation-gated
//! messages `u_z ⊙ q_rel` along every edge (inverse edges and self loops
//! included), averages them per target, applies `W_t`, and maps back onto
//! the ball of curvature `c_t`, where the ReLU and the ball projection act.
//! The readout is `sigmoid(f(log0(h^T)))` with a two-layer MLP `f`.

use std::path::Path;
use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint::{self, Checkpoint};
use crate::autodiff::{Matrix, ParamId, ParamStore, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};
use crate::executor::Projector;
use crate::fuzzy::FuzzySet;
use crate::kg::{EdgeStructure, RelationId};
use crate::rng::{self, Stream};

/// Offset keeping learned curvatures strictly positive.
pub const CURVATURE_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub layers: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: 32, layers: 4 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 {
            return Err(Error::Usage(format!("embedding dimension {} < 4", self.dim)));
        }
        if self.layers < 2 {
            return Err(Error::Usage(format!("layer count {} < 2", self.layers)));
        }
        Ok(())
    }
}

/// Edge lists of one graph view, laid out for message passing.
#[derive(Debug, Clone)]
pub struct PreparedEdges {
    num_entities: usize,
    num_relation_slots: usize,
    src: Rc<[usize]>,
    rel: Rc<[usize]>,
    /// `n × E` averaging matrix: entry `(v, e) = 1 / indeg(v)` for edge `e` into `v`.
    aggregate: Rc<SparseMatrix>,
}

impl PreparedEdges {
    pub fn new(edges: &EdgeStructure) -> Result<Self> {
        let mut src = Vec::with_capacity(edges.total_pairs());
        let mut rel = Vec::with_capacity(edges.total_pairs());
        let mut tgt = Vec::with_capacity(edges.total_pairs());
        for g in &edges.groups {
            for &(h, t) in &g.pairs {
                src.push(h.index());
                rel.push(g.relation.index());
                tgt.push(t.index());
            }
        }
        let indeg = edges.in_degree();
        let entries = tgt
            .iter()
            .enumerate()
            .map(|(e, &v)| (v, e, 1.0 / indeg[v] as f64))
            .collect();
        Ok(PreparedEdges {
            num_entities: edges.num_entities,
            num_relation_slots: edges.num_relation_slots(),
            src: src.into(),
            rel: rel.into(),
            aggregate: Rc::new(SparseMatrix::new(edges.num_entities, tgt.len(), entries)?),
        })
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relation_slots(&self) -> usize {
        self.num_relation_slots
    }

    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

#[derive(Debug, Clone)]
struct ParamIds {
    relations: ParamId,
    weights: Vec<ParamId>,
    thetas: Vec<ParamId>,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct ProjectionModel {
    config: ModelConfig,
    num_relation_slots: usize,
    store: ParamStore,
    ids: ParamIds,
    fixed_curvature: Option<f64>,
}

/// Inverse of `softplus(θ) + CURVATURE_FLOOR`.
pub fn theta_for_curvature(c: f64) -> f64 {
    let s = c - CURVATURE_FLOOR;
    s + (-(-s).exp_m1()).ln()
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    num_relation_slots: usize,
    #[serde(default)]
    extra: serde_json::Value,
}

impl ProjectionModel {
    /// Fresh model for a graph with `num_relation_slots` relation ids
    /// (forward, inverse and the self loop).
    pub fn new(config: ModelConfig, num_relation_slots: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let mut rng = rng::stream(seed, Stream::Init);
        let bound = 1.0 / (d as f64).sqrt();
        let mut uniform = |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound));
        let weights_init: Vec<Matrix> = (0..config.layers).map(|_| uniform(d, d)).collect();
        let w1 = uniform(d, d);
        let w2 = uniform(d, 1);
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let relations = Matrix::from_fn(num_relation_slots, d, |_, _| normal.sample(&mut rng));

        let mut store = ParamStore::new();
        let relations = store.add("relation_embeddings", relations);
        let mut weights = Vec::new();
        let mut thetas = Vec::new();
        for (t, w) in weights_init.into_iter().enumerate() {
            weights.push(store.add(format!("layer{t}.weight"), w));
            thetas.push(store.add(format!("layer{t}.theta"), Matrix::scalar(theta_for_curvature(1.0))));
        }
        let ids = ParamIds {
            relations,
            weights,
            thetas,
            w1: store.add("readout.w1", w1),
            b1: store.add("readout.b1", Matrix::zeros(1, d)),
            w2: store.add("readout.w2", w2),
            b2: store.add("readout.b2", Matrix::zeros(1, 1)),
        };
        Ok(ProjectionModel {
            config,
            num_relation_slots,
            store,
            ids,
            fixed_curvature: None,
        })
    }

    pub fn config(&self) -> ModelConfig {
        self.config
    }

    pub fn num_relation_slots(&self) -> usize {
        self.num_relation_slots
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Freezes every layer at curvature `c` instead of the learned values.
    pub fn set_fixed_curvature(&mut self, c: Option<f64>) -> Result<()> {
        if let Some(c) = c {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Usage(format!("curvature must be positive, got {c}")));
            }
        }
        self.fixed_curvature = c;
        Ok(())
    }

    /// Curvature of each layer as currently configured.
    pub fn curvatures(&self) -> Vec<f64> {
        self.ids
            .thetas
            .iter()
            .map(|&id| match self.fixed_curvature {
                Some(c) => c,
                None => {
                    let th = self.store.value(id).item();
                    th.max(0.0) + (-th.abs()).exp().ln_1p() + CURVATURE_FLOOR
                }
            })
            .collect()
    }

    pub fn relation_embeddings(&self) -> &Matrix {
        self.store.value(self.ids.relations)
    }

    pub fn layer_weight(&self, t: usize) -> &Matrix {
        self.store.value(self.ids.weights[t])
    }

    /// `(w1, b1, w2, b2)` of the readout MLP.
    pub fn readout(&self) -> (&Matrix, &Matrix, &Matrix, &Matrix) {
        (
            self.store.value(self.ids.w1),
            self.store.value(self.ids.b1),
            self.store.value(self.ids.w2),
            self.store.value(self.ids.b2),
        )
    }

    /// Loads all parameters onto `tape` as traced leaves.
    pub fn bind(&self, tape: &mut Tape) -> Result<BoundModel> {
        let curvatures = self
            .ids
            .thetas
            .iter()
            .map(|&id| match self.fixed_curvature {
                Some(c) => tape.constant(Matrix::scalar(c)),
                None => {
                    let th = tape.param(&self.store, id)?;
                    let sp = tape.softplus(th)?;
                    tape.add_scalar(sp, CURVATURE_FLOOR)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BoundModel {
            relations: tape.param(&self.store, self.ids.relations)?,
            weights: self
                .ids
                .weights
                .iter()
                .map(|&id| tape.param(&self.store, id))
                .collect::<Result<_>>()?,
            curvatures,
            w1: tape.param(&self.store, self.ids.w1)?,
            b1: tape.param(&self.store, self.ids.b1)?,
            w2: tape.param(&self.store, self.ids.w2)?,
            b2: tape.param(&self.store, self.ids.b2)?,
            num_relation_slots: self.num_relation_slots,
        })
    }

    /// Inference-only projection of a fuzzy set.
    pub fn project(&self, x: &FuzzySet, rel: RelationId, edges: &PreparedEdges) -> Result<FuzzySet> {
        if x.len() != edges.num_entities() {
            return Err(Error::dim("project", format!("input {} vs graph {}", x.len(), edges.num_entities())));
        }
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape)?;
        let xv = tape.constant(Matrix::column(x.as_slice().to_vec()))?;
        let y = bound.project(&mut tape, xv, rel, edges)?;
        FuzzySet::from_clamped(tape.value(y).data().to_vec())
    }

    fn meta(&self, extra: serde_json::Value) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(CheckpointMeta {
            model: self.config,
            num_relation_slots: self.num_relation_slots,
            extra,
        })?)
    }

    pub fn to_bytes(&self, extra: serde_json::Value) -> Result<Vec<u8>> {
        checkpoint::encode(&self.store, self.meta(extra)?)
    }

    pub fn save(&self, path: &Path, extra: serde_json::Value) -> Result<()> {
        checkpoint::save(path, &self.store, self.meta(extra)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(checkpoint::load(path)?, path)
    }

    pub fn from_checkpoint(ck: Checkpoint, path: &Path) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_value(ck.meta.clone()).map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: format!("bad model metadata: {e}"),
        })?;
        let mut model = Self::new(meta.model, meta.num_relation_slots, 0)?;
        let ids: Vec<ParamId> = model.store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let name = model.store.get(id).name.clone();
            let value = ck.get(&name).ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                message: format!("missing tensor `{name}`"),
            })?;
            model.store.set_value(id, value.clone()).map_err(|e| Error::Checkpoint {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
        }
        Ok(model)
    }
}

/// Parameters of a [`ProjectionModel`] recorded on one tape.
#[derive(Debug, Clone)]
pub struct BoundModel {
    relations: Var,
    weights: Vec<Var>,
    curvatures: Vec<Var>,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    num_relation_slots: usize,
}

fn at_layer(t: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Numeric { op } => Error::Numeric {
            op: format!("layer {t}: {op}"),
        },
        other => other,
    }
}

impl BoundModel {
    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn curvature(&self, t: usize) -> Var {
        self.curvatures[t]
    }

    /// `|V| × d` tangent states with row `v` equal to `x_v · q_rel`.
    pub fn init_states(&self, tape: &mut Tape, x: Var, rel: RelationId) -> Result<Var> {
        if rel.index() + 1 >= self.num_relation_slots {
            return Err(Error::Bounds {
                kind: "relation",
                id: rel.index(),
                limit: self.num_relation_slots - 1,
            });
        }
        let q = tape.gather_rows(self.relations, vec![rel.index()])?;
        tape.matmul(x, q)
    }

    /// One propagation step. Layer 0 consumes tangent states; later layers
    /// consume ball points at the previous layer's curvature.
    pub fn layer_forward(&self, tape: &mut Tape, h: Var, t: usize, edges: &PreparedEdges) -> Result<Var> {
        let run = |tape: &mut Tape| -> Result<Var> {
            let u = if t == 0 {
                h
            } else {
                tape.log0(h, self.curvatures[t - 1])?
            };
            let from = tape.gather_rows(u, Rc::clone(&edges.src))?;
            let gate = tape.gather_rows(self.relations, Rc::clone(&edges.rel))?;
            let messages = tape.mul(from, gate)?;
            let agg = tape.sparse_dense_matmul(Rc::clone(&edges.aggregate), messages)?;
            let z = tape.matmul(agg, self.weights[t])?;
            let ball = tape.exp0(z, self.curvatures[t])?;
            let act = tape.relu(ball)?;
            tape.ball_project(act, self.curvatures[t])
        };
        run(tape).map_err(at_layer(t))
    }

    /// Membership column `sigmoid(f(log0(h^T)))` for input column `x`.
    pub fn project(&self, tape: &mut Tape, x: Var, rel: RelationId, edges: &PreparedEdges) -> Result<Var> {
        if tape.value(x).shape() != (edges.num_entities(), 1) {
            return Err(Error::dim(
                "project",
                format!("input {:?} vs {} entities", tape.value(x).shape(), edges.num_entities()),
            ));
        }
        if edges.num_relation_slots() != self.num_relation_slots {
            return Err(Error::dim(
                "project",
                format!(
                    "graph has {} relation slots, model has {}",
                    edges.num_relation_slots(),
                    self.num_relation_slots
                ),
            ));
        }
        let mut h = self.init_states(tape, x, rel)?;
        for t in 0..self.layers() {
            h = self.layer_forward(tape, h, t, edges)?;
        }
        let last = self.layers() - 1;
        let u = tape.log0(h, self.curvatures[last]).map_err(at_layer(last))?;
        let a = tape.matmul(u, self.w1)?;
        let a = tape.add_row(a, self.b1)?;
        let a = tape.relu(a)?;
        let o = tape.matmul(a, self.w2)?;
        let o = tape.add_row(o, self.b2)?;
        tape.sigmoid(o)
    }

    pub fn projector<'a>(&'a self, edges: &'a PreparedEdges) -> NeuralProjector<'a> {
        NeuralProjector { model: self, edges }
    }
}

pub struct NeuralProjector<'a> {
    model: &'a BoundModel,
    edges: &'a PreparedEdges,
}

impl Projector for NeuralProjector<'_> {
    fn num_entities(&self) -> usize {
        self.edges.num_entities()
    }

    fn project(&self, tape: &mut Tape, x: Var, rel: RelationId) -> Result<Var> {
        self.model.project(tape, x, rel, self.edges)
    }
}
