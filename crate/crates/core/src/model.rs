//! Coupled recurrent embedding model.
//!
//! Each interaction `(u, j, f, t)` updates both endpoints with single-layer
//! tanh cells:
//!
//! ```text
//! u(t) = tanh(W_u1·u(t⁻) + W_u2·j(t⁻) + W_u3·f + w_u4·Δ̃_u + b_u)
//! j(t) = tanh(W_i1·j(t⁻) + W_i2·u(t⁻) + W_i3·f + w_i4·Δ̃_j + b_i)
//! ```
//!
//! Before an interaction the user embedding is projected forward in time,
//! `û = (1 + w_p·Δ̃) ⊙ u`, and the next item is predicted from the projected
//! user, the user's one-hot id, and the previous item's dynamic and one-hot
//! embeddings. Items are ranked by squared distance between the prediction
//! and each item's `[dynamic ‖ one-hot]` embedding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphdata::Interaction;
use crate::numgrad::{ParamId, ParameterSet, Shape, Tape, Tensor, Var};

pub const DEFAULT_DIM: usize = 64;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub d: usize,
    pub num_users: usize,
    pub num_items: usize,
    pub feature_dim: usize,
}

impl ModelDims {
    /// Length of a predicted item embedding: dynamic part plus one-hot part.
    pub fn prediction_len(&self) -> usize {
        self.d + self.num_items
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct CellIds {
    w_self: ParamId,
    w_other: ParamId,
    w_features: ParamId,
    w_time: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct PredictionIds {
    projected_user: ParamId,
    static_user: ParamId,
    prev_item: ParamId,
    prev_item_static: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    dims: ModelDims,
    params: ParameterSet,
    user_cell: CellIds,
    item_cell: CellIds,
    projection: ParamId,
    prediction: PredictionIds,
    /// Mean time delta used to normalize raw seconds.
    time_scale: f64,
}

fn glorot(rng: &mut impl Rng, rows: usize, cols: usize) -> Vec<f64> {
    let bound = (6.0 / (rows + cols).max(1) as f64).sqrt();
    (0..rows * cols)
        .map(|_| rng.gen_range(-bound..=bound))
        .collect()
}

fn add_matrix(
    params: &mut ParameterSet,
    name: &str,
    rows: usize,
    cols: usize,
    rng: &mut impl Rng,
) -> ParamId {
    let data = glorot(rng, rows, cols);
    params.add(
        name,
        Tensor::matrix(rows, cols, data).expect("sized by construction"),
        true,
    )
}

fn add_cell(
    params: &mut ParameterSet,
    prefix: &str,
    dims: ModelDims,
    rng: &mut impl Rng,
) -> CellIds {
    let d = dims.d;
    CellIds {
        w_self: add_matrix(params, &format!("{prefix}.w_self"), d, d, rng),
        w_other: add_matrix(params, &format!("{prefix}.w_other"), d, d, rng),
        w_features: add_matrix(
            params,
            &format!("{prefix}.w_features"),
            d,
            dims.feature_dim,
            rng,
        ),
        w_time: params.add(
            format!("{prefix}.w_time"),
            Tensor::vector(glorot(rng, d, 1)),
            true,
        ),
        bias: params.add(
            format!("{prefix}.bias"),
            Tensor::zeros(Shape::Vector(d)),
            true,
        ),
    }
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit time scale.
    pub fn init(dims: ModelDims, rng: &mut impl Rng) -> Result<ModelParams> {
        if dims.d == 0 || dims.num_users == 0 || dims.num_items == 0 {
            return Err(Error::Config(format!("invalid model dimensions {dims:?}")));
        }
        let d = dims.d;
        let mut params = ParameterSet::new();
        let user_cell = add_cell(&mut params, "user_cell", dims, rng);
        let item_cell = add_cell(&mut params, "item_cell", dims, rng);
        let projection = params.add("projection.w_p", Tensor::vector(glorot(rng, d, 1)), true);
        let p = dims.prediction_len();
        let prediction = PredictionIds {
            projected_user: add_matrix(&mut params, "prediction.b1_projected_user", p, d, rng),
            static_user: add_matrix(
                &mut params,
                "prediction.b2_static_user",
                p,
                dims.num_users,
                rng,
            ),
            prev_item: add_matrix(&mut params, "prediction.b3_prev_item", p, d, rng),
            prev_item_static: add_matrix(
                &mut params,
                "prediction.b4_prev_item_static",
                p,
                dims.num_items,
                rng,
            ),
            bias: params.add("prediction.bias", Tensor::zeros(Shape::Vector(p)), true),
        };
        Ok(ModelParams {
            dims,
            params,
            user_cell,
            item_cell,
            projection,
            prediction,
            time_scale: 1.0,
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn set_time_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Config(format!(
                "time scale must be positive, got {scale}"
            )));
        }
        self.time_scale = scale;
        Ok(())
    }

    /// Sets every parameter value to zero.
    pub fn zero_all(&mut self) {
        let ids: Vec<ParamId> = self.params.ids().collect();
        for id in ids {
            self.params
                .get_mut(id)
                .value
                .data_mut()
                .iter_mut()
                .for_each(|x| *x = 0.0);
        }
    }

    pub fn normalized_delta(&self, delta: f64) -> Result<f64> {
        if !delta.is_finite() || delta < 0.0 {
            return Err(Error::Argument(format!(
                "time delta must be non-negative, got {delta}"
            )));
        }
        Ok(delta / self.time_scale)
    }

    fn check_vec(&self, tape: &Tape, v: Var, len: usize, what: &str) -> Result<()> {
        let got = tape.value(v)?.len();
        if got != len {
            return Err(Error::Config(format!(
                "{what} has length {got}, expected {len}"
            )));
        }
        Ok(())
    }

    fn traced_cell(
        &self,
        tape: &mut Tape,
        ids: CellIds,
        own: Var,
        other: Var,
        features: &[f64],
        delta: f64,
    ) -> Result<Var> {
        let d = self.dims.d;
        self.check_vec(tape, own, d, "own embedding")?;
        self.check_vec(tape, other, d, "counterpart embedding")?;
        if features.len() != self.dims.feature_dim {
            return Err(Error::Config(format!(
                "interaction has {} features, model expects {}",
                features.len(),
                self.dims.feature_dim
            )));
        }
        let dt = self.normalized_delta(delta)?;
        let w_self = tape.param(&self.params, ids.w_self)?;
        let w_other = tape.param(&self.params, ids.w_other)?;
        let w_time = tape.param(&self.params, ids.w_time)?;
        let bias = tape.param(&self.params, ids.bias)?;
        let a = tape.matvec(w_self, own)?;
        let b = tape.matvec(w_other, other)?;
        let mut pre = tape.add(a, b)?;
        if !features.is_empty() {
            let w_f = tape.param(&self.params, ids.w_features)?;
            let f = tape.constant(Tensor::vector(features.to_vec()))?;
            let c = tape.matvec(w_f, f)?;
            pre = tape.add(pre, c)?;
        }
        let t = tape.scale(w_time, dt)?;
        pre = tape.add(pre, t)?;
        pre = tape.add(pre, bias)?;
        tape.tanh(pre)
    }

    /// Traced user cell; `delta` is raw seconds since the user's last update.
    pub fn traced_user_update(
        &self,
        tape: &mut Tape,
        user_prev: Var,
        item_prev: Var,
        features: &[f64],
        delta: f64,
    ) -> Result<Var> {
        self.traced_cell(tape, self.user_cell, user_prev, item_prev, features, delta)
    }

    /// Traced item cell; `delta` is raw seconds since the item's last update.
    pub fn traced_item_update(
        &self,
        tape: &mut Tape,
        item_prev: Var,
        user_prev: Var,
        features: &[f64],
        delta: f64,
    ) -> Result<Var> {
        self.traced_cell(tape, self.item_cell, item_prev, user_prev, features, delta)
    }

    /// `û = u + (Δ̃·w_p) ⊙ u`.
    pub fn traced_project(&self, tape: &mut Tape, user: Var, delta: f64) -> Result<Var> {
        self.check_vec(tape, user, self.dims.d, "user embedding")?;
        let dt = self.normalized_delta(delta)?;
        let w_p = tape.param(&self.params, self.projection)?;
        let scaled = tape.scale(w_p, dt)?;
        let drift = tape.elementwise_mul(scaled, user)?;
        tape.add(user, drift)
    }

    /// `ĵ = B1·û + B2·onehot(u) + B3·j_prev + B4·onehot(j_prev) + b`; a missing
    /// previous item contributes zero vectors.
    pub fn traced_predict(
        &self,
        tape: &mut Tape,
        projected_user: Var,
        user: usize,
        prev_item_dynamic: Var,
        prev_item: Option<usize>,
    ) -> Result<Var> {
        let dims = self.dims;
        if user >= dims.num_users || prev_item.is_some_and(|j| j >= dims.num_items) {
            return Err(Error::Config(format!(
                "user {user} / previous item {prev_item:?} outside the model's id space"
            )));
        }
        self.check_vec(tape, projected_user, dims.d, "projected user")?;
        self.check_vec(tape, prev_item_dynamic, dims.d, "previous item embedding")?;
        let ids = self.prediction;
        let b1 = tape.param(&self.params, ids.projected_user)?;
        let b2 = tape.param(&self.params, ids.static_user)?;
        let b3 = tape.param(&self.params, ids.prev_item)?;
        let b4 = tape.param(&self.params, ids.prev_item_static)?;
        let bias = tape.param(&self.params, ids.bias)?;
        let su = tape.constant(Tensor::vector(one_hot(dims.num_users, Some(user))))?;
        let sj = tape.constant(Tensor::vector(one_hot(dims.num_items, prev_item)))?;
        let t1 = tape.matvec(b1, projected_user)?;
        let t2 = tape.matvec(b2, su)?;
        let t3 = tape.matvec(b3, prev_item_dynamic)?;
        let t4 = tape.matvec(b4, sj)?;
        let mut out = tape.add(t1, t2)?;
        out = tape.add(out, t3)?;
        out = tape.add(out, t4)?;
        tape.add(out, bias)
    }

    /// New user vector for `interaction`, reading the store without mutating it.
    pub fn update_user_embedding(
        &self,
        store: &EmbeddingStore,
        interaction: &Interaction,
        delta_u: f64,
    ) -> Result<Vec<f64>> {
        store.check_endpoints(interaction)?;
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::vector(store.user(interaction.user).to_vec()))?;
        let j = tape.constant(Tensor::vector(store.item(interaction.item).to_vec()))?;
        let out = self.traced_user_update(&mut tape, u, j, &interaction.features, delta_u)?;
        Ok(tape.value(out)?.data().to_vec())
    }

    pub fn update_item_embedding(
        &self,
        store: &EmbeddingStore,
        interaction: &Interaction,
        delta_i: f64,
    ) -> Result<Vec<f64>> {
        store.check_endpoints(interaction)?;
        let mut tape = Tape::new();
        let j = tape.constant(Tensor::vector(store.item(interaction.item).to_vec()))?;
        let u = tape.constant(Tensor::vector(store.user(interaction.user).to_vec()))?;
        let out = self.traced_item_update(&mut tape, j, u, &interaction.features, delta_i)?;
        Ok(tape.value(out)?.data().to_vec())
    }

    pub fn project_user(&self, user_embedding: &[f64], delta: f64) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::vector(user_embedding.to_vec()))?;
        let out = self.traced_project(&mut tape, u, delta)?;
        Ok(tape.value(out)?.data().to_vec())
    }

    /// Predicted `[dynamic ‖ one-hot]` embedding of `user`'s next item,
    /// `delta` seconds after the user's last update.
    pub fn predict_item_embedding(
        &self,
        store: &EmbeddingStore,
        user: usize,
        delta: f64,
    ) -> Result<Vec<f64>> {
        if user >= store.num_users() {
            return Err(Error::Config(format!("user {user} outside the store")));
        }
        let mut tape = Tape::new();
        let u = tape.constant(Tensor::vector(store.user(user).to_vec()))?;
        let projected = self.traced_project(&mut tape, u, delta)?;
        let prev = store.last_item_of_user(user);
        let prev_dyn = tape.constant(Tensor::vector(store.item_or_null(prev)))?;
        let out = self.traced_predict(&mut tape, projected, user, prev_dyn, prev)?;
        Ok(tape.value(out)?.data().to_vec())
    }
}

pub fn one_hot(len: usize, index: Option<usize>) -> Vec<f64> {
    let mut v = vec![0.0; len];
    if let Some(i) = index {
        v[i] = 1.0;
    }
    v
}

/// Dynamic embeddings plus per-node bookkeeping. Static embeddings are the
/// one-hot id vectors and are produced on demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    d: usize,
    dynamic_user: Vec<Vec<f64>>,
    dynamic_item: Vec<Vec<f64>>,
    last_item_of_user: Vec<Option<usize>>,
    user_last_update: Vec<f64>,
    item_last_update: Vec<f64>,
}

impl EmbeddingStore {
    /// All dynamic embeddings at zero, all clocks at time zero.
    pub fn new(d: usize, num_users: usize, num_items: usize) -> EmbeddingStore {
        EmbeddingStore {
            d,
            dynamic_user: vec![vec![0.0; d]; num_users],
            dynamic_item: vec![vec![0.0; d]; num_items],
            last_item_of_user: vec![None; num_users],
            user_last_update: vec![0.0; num_users],
            item_last_update: vec![0.0; num_items],
        }
    }

    pub fn for_dims(dims: ModelDims) -> EmbeddingStore {
        Self::new(dims.d, dims.num_users, dims.num_items)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn num_users(&self) -> usize {
        self.dynamic_user.len()
    }

    pub fn num_items(&self) -> usize {
        self.dynamic_item.len()
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.dynamic_user[u]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.dynamic_item[j]
    }

    /// Dynamic embedding of `item`, or the all-zero null item.
    pub fn item_or_null(&self, item: Option<usize>) -> Vec<f64> {
        item.map_or_else(|| vec![0.0; self.d], |j| self.dynamic_item[j].clone())
    }

    pub fn static_user(&self, u: usize) -> Vec<f64> {
        one_hot(self.num_users(), Some(u))
    }

    pub fn static_item(&self, j: usize) -> Vec<f64> {
        one_hot(self.num_items(), Some(j))
    }

    pub fn last_item_of_user(&self, u: usize) -> Option<usize> {
        self.last_item_of_user[u]
    }

    pub fn user_last_update(&self, u: usize) -> f64 {
        self.user_last_update[u]
    }

    pub fn item_last_update(&self, j: usize) -> f64 {
        self.item_last_update[j]
    }

    /// Seconds since each endpoint was last updated, clamped at zero.
    pub fn deltas(&self, it: &Interaction) -> (f64, f64) {
        (
            (it.timestamp - self.user_last_update[it.user]).max(0.0),
            (it.timestamp - self.item_last_update[it.item]).max(0.0),
        )
    }

    pub fn check_endpoints(&self, it: &Interaction) -> Result<()> {
        if it.user >= self.num_users() || it.item >= self.num_items() {
            return Err(Error::Config(format!(
                "interaction ({}, {}) outside store of {} users / {} items",
                it.user,
                it.item,
                self.num_users(),
                self.num_items()
            )));
        }
        Ok(())
    }

    /// Writes the post-interaction embeddings of both endpoints.
    pub fn commit(
        &mut self,
        it: &Interaction,
        user_vec: Vec<f64>,
        item_vec: Vec<f64>,
    ) -> Result<()> {
        self.check_endpoints(it)?;
        if user_vec.len() != self.d || item_vec.len() != self.d {
            return Err(Error::Config(
                "committed embedding has the wrong dimension".into(),
            ));
        }
        if user_vec.iter().chain(&item_vec).any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding commit".into()));
        }
        self.dynamic_user[it.user] = user_vec;
        self.dynamic_item[it.item] = item_vec;
        self.last_item_of_user[it.user] = Some(it.item);
        let u = &mut self.user_last_update[it.user];
        *u = u.max(it.timestamp);
        let j = &mut self.item_last_update[it.item];
        *j = j.max(it.timestamp);
        Ok(())
    }

    /// Squared distance from `predicted` to every item's `[dynamic ‖ one-hot]`
    /// embedding.
    pub fn item_distances(&self, predicted: &[f64]) -> Result<Vec<f64>> {
        let d = self.d;
        if predicted.len() != d + self.num_items() {
            return Err(Error::Config(format!(
                "prediction has length {}, expected {}",
                predicted.len(),
                d + self.num_items()
            )));
        }
        let (dyn_part, static_part) = predicted.split_at(d);
        let static_norm: f64 = static_part.iter().map(|x| x * x).sum();
        Ok(self
            .dynamic_item
            .iter()
            .enumerate()
            .map(|(j, e)| {
                let dyn_dist: f64 = dyn_part.iter().zip(e).map(|(a, b)| (a - b) * (a - b)).sum();
                // ‖s − e_j‖² = ‖s‖² − 2·s_j + 1
                dyn_dist + static_norm - 2.0 * static_part[j] + 1.0
            })
            .collect())
    }

    /// Items ordered nearest first; ties go to the lower index.
    pub fn rank_items(&self, predicted: &[f64]) -> Result<Vec<usize>> {
        let dist = self.item_distances(predicted)?;
        let mut order: Vec<usize> = (0..dist.len()).collect();
        order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
        Ok(order)
    }

    /// 1-based position of `item` in [`rank_items`](Self::rank_items).
    pub fn rank_of(&self, predicted: &[f64], item: usize) -> Result<usize> {
        let dist = self.item_distances(predicted)?;
        let target = dist[item];
        let ahead = dist
            .iter()
            .enumerate()
            .filter(|&(j, &x)| x < target || (x == target && j < item))
            .count();
        Ok(ahead + 1)
    }
}

/// Parameters plus embedding state, tagged with a schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema_version: u32,
    pub params: ModelParams,
    pub store: EmbeddingStore,
}

impl Checkpoint {
    pub fn new(params: ModelParams, store: EmbeddingStore) -> Self {
        Checkpoint {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            params,
            store,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ck.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!(
                "schema version {} is not supported (expected {CHECKPOINT_SCHEMA_VERSION})",
                ck.schema_version
            )));
        }
        ck.params.params_mut().zero_grad();
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrad::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            d: 4,
            num_users: 3,
            num_items: 5,
            feature_dim: 2,
        }
    }

    fn random_store(rng: &mut impl Rng, dims: ModelDims) -> EmbeddingStore {
        let mut s = EmbeddingStore::for_dims(dims);
        for v in s.dynamic_user.iter_mut().chain(s.dynamic_item.iter_mut()) {
            v.iter_mut().for_each(|x| *x = rng.gen_range(-0.9..0.9));
        }
        s.last_item_of_user[1] = Some(2);
        s
    }

    fn interaction() -> Interaction {
        Interaction {
            user: 1,
            item: 3,
            timestamp: 2.0,
            features: vec![0.3, -0.2],
            state_label: 0,
        }
    }

    #[test]
    fn zero_weights_give_zero_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ModelParams::init(dims(), &mut rng).unwrap();
        p.zero_all();
        let s = random_store(&mut rng, dims());
        let it = interaction();
        assert_eq!(p.update_user_embedding(&s, &it, 1.5).unwrap(), vec![0.0; 4]);
        assert_eq!(p.update_item_embedding(&s, &it, 1.5).unwrap(), vec![0.0; 4]);
        assert_eq!(p.predict_item_embedding(&s, 1, 1.0).unwrap(), vec![0.0; 9]);
    }

    #[test]
    fn cell_outputs_stay_inside_the_unit_box() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let s = random_store(&mut rng, dims());
        let u = p.update_user_embedding(&s, &interaction(), 100.0).unwrap();
        // tanh saturates to exactly ±1 in f64 for large inputs.
        assert!(u.iter().all(|x| x.abs() <= 1.0));
        let u = p.update_user_embedding(&s, &interaction(), 0.5).unwrap();
        assert!(u.iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ModelParams::init(dims(), &mut rng).unwrap();
        let u = vec![0.1, -0.5, 0.7, 0.2];
        assert_eq!(p.project_user(&u, 0.0).unwrap(), u);
        assert_eq!(p.project_user(&[0.0; 4], 3.0).unwrap(), vec![0.0; 4]);
        assert!(matches!(p.project_user(&u, -1.0), Err(Error::Argument(_))));
        p.zero_all();
        assert_eq!(p.project_user(&u, 7.5).unwrap(), u);
    }

    #[test]
    fn prediction_has_dynamic_plus_static_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let s = random_store(&mut rng, dims());
        assert_eq!(p.predict_item_embedding(&s, 0, 1.0).unwrap().len(), 4 + 5);
        assert_eq!(p.predict_item_embedding(&s, 1, 1.0).unwrap().len(), 4 + 5);
    }

    #[test]
    fn cell_and_prediction_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = ModelParams::init(dims(), &mut rng).unwrap();
        let s = random_store(&mut rng, dims());
        let it = interaction();
        let target: Vec<f64> = (0..9).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let model = p.clone();
        let err = finite_difference_check(
            |ps, tape| {
                let mut m = model.clone();
                *m.params_mut() = ps.clone();
                let u = tape.constant(Tensor::vector(s.user(1).to_vec()))?;
                let j = tape.constant(Tensor::vector(s.item(3).to_vec()))?;
                let nu = m.traced_user_update(tape, u, j, &it.features, 0.7)?;
                let ni = m.traced_item_update(tape, j, u, &it.features, 0.4)?;
                let proj = m.traced_project(tape, nu, 1.3)?;
                let prev = tape.constant(Tensor::vector(s.item(2).to_vec()))?;
                let pred = m.traced_predict(tape, proj, 1, prev, Some(2))?;
                let tgt = tape.constant(Tensor::vector(target.clone()))?;
                let a = tape.squared_l2_distance(pred, tgt)?;
                let b = tape.squared_l2_distance(ni, u)?;
                tape.sum(&[a, b])
            },
            p.params_mut(),
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "max relative error {err}");
    }

    #[test]
    fn ranking_nearest_first() {
        let mut s = EmbeddingStore::new(1, 1, 2);
        s.dynamic_item[0] = vec![0.0];
        s.dynamic_item[1] = vec![0.5];
        // Equal static parts, dynamic part closer to item 1.
        let pred = vec![0.4, 0.5, 0.5];
        assert_eq!(s.rank_items(&pred).unwrap(), vec![1, 0]);
        assert_eq!(s.rank_of(&pred, 1).unwrap(), 1);
        assert_eq!(s.rank_of(&pred, 0).unwrap(), 2);
    }

    #[test]
    fn exact_match_ranks_first_and_ties_break_by_index() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_store(&mut rng, dims());
        let mut pred = s.item(3).to_vec();
        pred.extend(s.static_item(3));
        assert_eq!(s.rank_items(&pred).unwrap()[0], 3);

        let flat = EmbeddingStore::new(2, 1, 3);
        assert_eq!(flat.rank_items(&[0.0; 5]).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn commit_touches_only_endpoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut s = random_store(&mut rng, dims());
        let before = s.clone();
        let it = interaction();
        s.commit(&it, vec![0.5; 4], vec![-0.5; 4]).unwrap();
        for u in 0..3 {
            if u != it.user {
                assert_eq!(s.user(u), before.user(u));
            }
        }
        for j in 0..5 {
            if j != it.item {
                assert_eq!(s.item(j), before.item(j));
            }
        }
        assert_eq!(s.last_item_of_user(1), Some(3));
        assert_eq!(s.user_last_update(1), 2.0);
    }

    #[test]
    fn checkpoint_round_trip_and_version_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = ModelParams::init(dims(), &mut rng).unwrap();
        let s = random_store(&mut rng, dims());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = Checkpoint::new(p, s);
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);

        let mut bad = ck.clone();
        bad.schema_version = 99;
        bad.save(&path).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(Error::Checkpoint(_))));
    }
}
