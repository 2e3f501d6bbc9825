//! Current/prior token fusion and multimodal sequence assembly.
//!
//! Each region contributes a current vector and a prior vector. Their
//! concatenation runs through a small projection network (linear, batch-norm
//! in inference form, linear) to give one joint vector per region. Regions
//! outside the dropout target are replaced by the projection of the zero
//! concatenation, computed once and shared. The joint vectors then join the
//! text tokens in a single embedded sequence.

use crate::corpus::AnatomicalTokenSet;
use crate::seed::rng_from_seed;
use crate::vocab::RegionVocabulary;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("{what}: expected {expected} values, got {got}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        got: usize,
    },
    #[error("matrix data length {len} does not match shape {rows}x{cols}")]
    BadMatrixShape { rows: usize, cols: usize, len: usize },
    #[error("batch-norm epsilon must be non-negative, got {0}")]
    NegativeEpsilon(f64),
    #[error("text token id {id} outside embedding table of {table} rows")]
    TokenIdOutOfRange { id: usize, table: usize },
    #[error("sequence needs {needed} positions but the position table has {max}")]
    PositionOverflow { needed: usize, max: usize },
}

/// Dense row-major matrix. Serialized with its shape so files are
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, FusionError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        for row in &rows {
            if row.len() != n_cols {
                return Err(FusionError::BadMatrixShape {
                    rows: n_rows,
                    cols: n_cols,
                    len: row.len(),
                });
            }
        }
        Ok(Self {
            rows: n_rows,
            cols: n_cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn random<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        if self.data.len() != self.rows * self.cols {
            return Err(FusionError::BadMatrixShape {
                rows: self.rows,
                cols: self.cols,
                len: self.data.len(),
            });
        }
        Ok(())
    }

    /// y = M x.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, FusionError> {
        if x.len() != self.cols {
            return Err(FusionError::DimensionMismatch {
                what: "matrix-vector product input".into(),
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows];
        for (r, out) in y.iter_mut().enumerate() {
            let row = self.row(r);
            let mut acc = 0.0;
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *out = acc;
        }
        Ok(y)
    }
}

/// Weights of the projection network f: linear, batch-norm in inference
/// form, linear. Input width is `2 * token_dim` (current and prior halves),
/// output width is `output_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

impl ProjectionParams {
    pub fn input_dim(&self) -> usize {
        self.w1.cols
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.rows
    }

    pub fn output_dim(&self) -> usize {
        self.w2.rows
    }

    /// Per-region token width the params expect (half the input width).
    pub fn token_dim(&self) -> usize {
        self.input_dim() / 2
    }

    /// Pass-through configuration: FC1 and batch-norm are identities and FC2
    /// sums the current and prior halves, so f([c, p]) = c + p. Useful for
    /// hand-checked tests.
    pub fn identity(token_dim: usize) -> Self {
        let hidden = 2 * token_dim;
        let mut w2 = Matrix::zeros(token_dim, hidden);
        for i in 0..token_dim {
            w2.data[i * hidden + i] = 1.0;
            w2.data[i * hidden + token_dim + i] = 1.0;
        }
        Self {
            w1: Matrix::identity(hidden),
            b1: vec![0.0; hidden],
            gamma: vec![1.0; hidden],
            beta: vec![0.0; hidden],
            running_mean: vec![0.0; hidden],
            running_var: vec![1.0; hidden],
            epsilon: 0.0,
            w2,
            b2: vec![0.0; token_dim],
        }
    }

    /// Random weights with hidden width `2 * token_dim`, reproducible from
    /// the seed. Variances stay well away from zero so the batch-norm stays
    /// numerically tame.
    pub fn random(token_dim: usize, output_dim: usize, seed: u64) -> Self {
        let mut rng = rng_from_seed(seed);
        let hidden = 2 * token_dim;
        let input = 2 * token_dim;
        let scale = 1.0 / (input as f64).sqrt();
        Self {
            w1: Matrix::random(hidden, input, scale, &mut rng),
            b1: (0..hidden).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            gamma: (0..hidden).map(|_| rng.random_range(0.5..=1.5)).collect(),
            beta: (0..hidden).map(|_| rng.random_range(-0.1..=0.1)).collect(),
            running_mean: (0..hidden).map(|_| rng.random_range(-0.5..=0.5)).collect(),
            running_var: (0..hidden).map(|_| rng.random_range(0.5..=1.5)).collect(),
            epsilon: 1e-5,
            w2: Matrix::random(output_dim, hidden, scale, &mut rng),
            b2: (0..output_dim).map(|_| rng.random_range(-0.1..=0.1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        self.w1.validate()?;
        self.w2.validate()?;
        let hidden = self.hidden_dim();
        let check = |what: &str, len: usize| -> Result<(), FusionError> {
            if len != hidden {
                return Err(FusionError::DimensionMismatch {
                    what: what.into(),
                    expected: hidden,
                    got: len,
                });
            }
            Ok(())
        };
        check("first bias", self.b1.len())?;
        check("batch-norm gamma", self.gamma.len())?;
        check("batch-norm beta", self.beta.len())?;
        check("batch-norm running mean", self.running_mean.len())?;
        check("batch-norm running variance", self.running_var.len())?;
        if self.w2.cols != hidden {
            return Err(FusionError::DimensionMismatch {
                what: "second layer input".into(),
                expected: hidden,
                got: self.w2.cols,
            });
        }
        if self.b2.len() != self.output_dim() {
            return Err(FusionError::DimensionMismatch {
                what: "second bias".into(),
                expected: self.output_dim(),
                got: self.b2.len(),
            });
        }
        if self.epsilon < 0.0 {
            return Err(FusionError::NegativeEpsilon(self.epsilon));
        }
        Ok(())
    }
}

/// Runs the projection network on one concatenated vector.
///
/// The batch-norm uses its stored statistics:
/// y = gamma * (h - mean) / sqrt(var + eps) + beta, per coordinate.
pub fn mlp_forward(params: &ProjectionParams, x: &[f64]) -> Result<Vec<f64>, FusionError> {
    let mut h = params.w1.matvec(x)?;
    for (v, b) in h.iter_mut().zip(&params.b1) {
        *v += b;
    }
    for (i, v) in h.iter_mut().enumerate() {
        let scale = (params.running_var[i] + params.epsilon).sqrt();
        *v = params.gamma[i] * (*v - params.running_mean[i]) / scale + params.beta[i];
    }
    let mut y = params.w2.matvec(&h)?;
    for (v, b) in y.iter_mut().zip(&params.b2) {
        *v += b;
    }
    Ok(y)
}

/// Joint vectors for every region in vocabulary order, with the mask that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointRepresentation {
    pub width: usize,
    pub vectors: Vec<Vec<f64>>,
    pub masked: Vec<bool>,
}

/// Fuses current and prior token sets into joint vectors.
///
/// Region n inside `a_target` gets f([current_n, prior_n]) with the current
/// half first. Every region outside gets the same shared vector f(0), so a
/// masked region's own tokens cannot leak through.
pub fn build_joint_representation(
    current: &AnatomicalTokenSet,
    prior: &AnatomicalTokenSet,
    a_target: &BTreeSet<String>,
    vocab: &RegionVocabulary,
    params: &ProjectionParams,
) -> Result<JointRepresentation, FusionError> {
    let n = vocab.len();
    let token_dim = params.token_dim();
    let expect = |what: &str, len: usize, expected: usize| -> Result<(), FusionError> {
        if len != expected {
            return Err(FusionError::DimensionMismatch {
                what: what.into(),
                expected,
                got: len,
            });
        }
        Ok(())
    };
    expect("current token set regions", current.entries.len(), n)?;
    expect("prior token set regions", prior.entries.len(), n)?;
    expect("current token width", current.d, token_dim)?;
    expect("prior token width", prior.d, token_dim)?;

    let masked_value = mlp_forward(params, &vec![0.0; params.input_dim()])?;

    let mut vectors = Vec::with_capacity(n);
    let mut masked = Vec::with_capacity(n);
    for (i, name) in vocab.iter().enumerate() {
        if a_target.contains(name) {
            let mut x = Vec::with_capacity(2 * token_dim);
            x.extend_from_slice(&current.entries[i].vector);
            x.extend_from_slice(&prior.entries[i].vector);
            vectors.push(mlp_forward(params, &x)?);
            masked.push(false);
        } else {
            vectors.push(masked_value.clone());
            masked.push(true);
        }
    }

    Ok(JointRepresentation {
        width: params.output_dim(),
        vectors,
        masked,
    })
}

/// Which stream a sequence position came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Visual,
    Text,
}

/// One embedded position: content plus positional plus segment embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePosition {
    pub index: usize,
    pub segment: Segment,
    pub vector: Vec<f64>,
}

/// Provenance of one visual position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualSlot {
    pub region: String,
    pub masked: bool,
}

/// The assembled input sequence: visual positions in vocabulary order
/// followed by text positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultimodalSequence {
    pub width: usize,
    pub positions: Vec<SequencePosition>,
    pub visual_slots: Vec<VisualSlot>,
}

impl MultimodalSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn visual_len(&self) -> usize {
        self.visual_slots.len()
    }
}

/// Embedding tables for sequence assembly. The visual adapter is a bias-free
/// linear map from joint width to sequence width; token/position rows are
/// looked up by id/index; each stream adds its own segment vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedTables {
    pub width: usize,
    pub visual_adapter: Matrix,
    pub token_table: Matrix,
    pub position_table: Matrix,
    pub segment_visual: Vec<f64>,
    pub segment_text: Vec<f64>,
    /// Keep masked regions in the sequence (as shared f(0) slots) or drop
    /// them entirely.
    pub include_masked: bool,
}

impl EmbedTables {
    pub fn random(
        width: usize,
        joint_width: usize,
        text_vocab: usize,
        max_positions: usize,
        seed: u64,
    ) -> Self {
        let mut rng = rng_from_seed(seed);
        let scale = 0.1;
        Self {
            width,
            visual_adapter: Matrix::random(width, joint_width, scale, &mut rng),
            token_table: Matrix::random(text_vocab, width, scale, &mut rng),
            position_table: Matrix::random(max_positions, width, scale, &mut rng),
            segment_visual: (0..width).map(|_| rng.random_range(-scale..=scale)).collect(),
            segment_text: (0..width).map(|_| rng.random_range(-scale..=scale)).collect(),
            include_masked: true,
        }
    }

    pub fn max_positions(&self) -> usize {
        self.position_table.rows
    }
}

/// Builds the embedded sequence: adapted joint vectors (vocabulary order,
/// masked slots kept or dropped per the tables), then text token embeddings.
pub fn assemble_multimodal(
    joint: &JointRepresentation,
    vocab: &RegionVocabulary,
    text_ids: &[usize],
    tables: &EmbedTables,
) -> Result<MultimodalSequence, FusionError> {
    if joint.vectors.len() != vocab.len() {
        return Err(FusionError::DimensionMismatch {
            what: "joint representation regions".into(),
            expected: vocab.len(),
            got: joint.vectors.len(),
        });
    }

    let mut visual_slots = Vec::new();
    let mut contents: Vec<(Segment, Vec<f64>)> = Vec::new();
    for (i, name) in vocab.iter().enumerate() {
        if joint.masked[i] && !tables.include_masked {
            continue;
        }
        contents.push((Segment::Visual, tables.visual_adapter.matvec(&joint.vectors[i])?));
        visual_slots.push(VisualSlot {
            region: name.to_string(),
            masked: joint.masked[i],
        });
    }
    for &id in text_ids {
        if id >= tables.token_table.rows {
            return Err(FusionError::TokenIdOutOfRange {
                id,
                table: tables.token_table.rows,
            });
        }
        contents.push((Segment::Text, tables.token_table.row(id).to_vec()));
    }

    if contents.len() > tables.max_positions() {
        return Err(FusionError::PositionOverflow {
            needed: contents.len(),
            max: tables.max_positions(),
        });
    }

    let positions = contents
        .into_iter()
        .enumerate()
        .map(|(index, (segment, mut vector))| {
            let positional = tables.position_table.row(index);
            let segmental = match segment {
                Segment::Visual => &tables.segment_visual,
                Segment::Text => &tables.segment_text,
            };
            for ((v, p), s) in vector.iter_mut().zip(positional).zip(segmental) {
                *v = *v + p + s;
            }
            SequencePosition {
                index,
                segment,
                vector,
            }
        })
        .collect();

    Ok(MultimodalSequence {
        width: tables.width,
        positions,
        visual_slots,
    })
}

/// Anything that can turn an assembled sequence into report text. The
/// pipeline is generic over this seam so a learned model can replace the
/// built-in template generator.
pub trait ReportGenerator {
    fn generate(&self, sequence: &MultimodalSequence) -> String;
}

/// Deterministic stand-in generator: one stock sentence per unmasked region,
/// in slot order. An all-masked sequence yields the empty string.
#[derive(Debug, Clone, Default)]
pub struct TemplateGenerator;

impl ReportGenerator for TemplateGenerator {
    fn generate(&self, sequence: &MultimodalSequence) -> String {
        sequence
            .visual_slots
            .iter()
            .filter(|slot| !slot.masked)
            .map(|slot| format!("The {} is unremarkable.", slot.region))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> RegionVocabulary {
        RegionVocabulary::new(["abdomen", "left lung", "right lung"]).unwrap()
    }

    fn token_set(vocab: &RegionVocabulary, d: usize, fill: f64) -> AnatomicalTokenSet {
        let mut set = AnatomicalTokenSet::zeros(vocab, d);
        for (i, entry) in set.entries.iter_mut().enumerate() {
            entry.present = true;
            entry.vector = (0..d).map(|j| fill + i as f64 + j as f64 * 0.5).collect();
        }
        set
    }

    /// Scalar reference for matvec, written with explicit index arithmetic.
    #[allow(clippy::needless_range_loop)]
    fn matvec_oracle(m: &Matrix, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; m.rows];
        for r in 0..m.rows {
            for c in 0..m.cols {
                y[r] += m.data[r * m.cols + c] * x[c];
            }
        }
        y
    }

    #[test]
    fn matvec_matches_scalar_oracle() {
        let mut rng = rng_from_seed(11);
        for _ in 0..20 {
            let rows = rng.random_range(1..8);
            let cols = rng.random_range(1..8);
            let m = Matrix::random(rows, cols, 1.0, &mut rng);
            let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let got = m.matvec(&x).unwrap();
            let want = matvec_oracle(&m, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matvec_rejects_wrong_input_length() {
        let m = Matrix::identity(3);
        assert!(matches!(
            m.matvec(&[1.0, 2.0]),
            Err(FusionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn forward_hand_computed_case() {
        // token_dim 1: x = [c, p], hidden 2.
        let params = ProjectionParams {
            w1: Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap(),
            b1: vec![0.5, -0.5],
            gamma: vec![2.0, 1.0],
            beta: vec![0.1, 0.2],
            running_mean: vec![1.0, 0.0],
            running_var: vec![4.0, 1.0],
            epsilon: 0.0,
            w2: Matrix::from_rows(vec![vec![1.0, 1.0]]).unwrap(),
            b2: vec![10.0],
        };
        params.validate().unwrap();
        let x = [1.0, 2.0];
        // h = [1*1+2*2+0.5, 3*1+4*2-0.5] = [5.5, 10.5]
        // bn = [2*(5.5-1)/2+0.1, 1*(10.5-0)/1+0.2] = [4.6, 10.7]
        // y = [4.6+10.7+10] = [25.3]
        let y = mlp_forward(&params, &x).unwrap();
        assert!((y[0] - 25.3).abs() < 1e-12);
    }

    #[test]
    fn identity_params_sum_the_halves() {
        let params = ProjectionParams::identity(3);
        params.validate().unwrap();
        let y = mlp_forward(&params, &[1.0, 2.0, 3.0, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(y, vec![11.0, 22.0, 33.0]);
    }

    #[test]
    fn forward_is_affine() {
        // An affine map preserves midpoints: f((x+y)/2) = (f(x)+f(y))/2.
        let params = ProjectionParams::random(3, 2, 77);
        params.validate().unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.random_range(-2.0..=2.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| (a + b) / 2.0).collect();
            let f_mid = mlp_forward(&params, &mid).unwrap();
            let f_x = mlp_forward(&params, &x).unwrap();
            let f_y = mlp_forward(&params, &y).unwrap();
            for i in 0..f_mid.len() {
                let avg = (f_x[i] + f_y[i]) / 2.0;
                assert!((f_mid[i] - avg).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn joint_representation_masks_share_one_vector() {
        let vocab = small_vocab();
        let params = ProjectionParams::random(2, 2, 3);
        let current = token_set(&vocab, 2, 1.0);
        let prior = token_set(&vocab, 2, -1.0);
        let a_target: BTreeSet<String> = ["left lung".to_string()].into();
        let joint =
            build_joint_representation(&current, &prior, &a_target, &vocab, &params).unwrap();

        assert_eq!(joint.masked, vec![true, false, true]);
        // Masked slots are bitwise identical to f(0) and to each other.
        let f0 = mlp_forward(&params, &[0.0; 4]).unwrap();
        assert_eq!(joint.vectors[0], f0);
        assert_eq!(joint.vectors[2], f0);

        // The unmasked slot is the forward pass of [current, prior].
        let i = vocab.index_of("left lung").unwrap();
        let mut x = current.entries[i].vector.clone();
        x.extend_from_slice(&prior.entries[i].vector);
        assert_eq!(joint.vectors[i], mlp_forward(&params, &x).unwrap());
    }

    #[test]
    fn masked_region_inputs_cannot_leak() {
        let vocab = small_vocab();
        let params = ProjectionParams::random(2, 2, 3);
        let current = token_set(&vocab, 2, 1.0);
        let prior = token_set(&vocab, 2, -1.0);
        let a_target: BTreeSet<String> = ["left lung".to_string()].into();
        let base =
            build_joint_representation(&current, &prior, &a_target, &vocab, &params).unwrap();

        // Scramble a masked region's tokens; the output must not move.
        let mut scrambled = current.clone();
        let masked_index = vocab.index_of("abdomen").unwrap();
        scrambled.entries[masked_index].vector = vec![999.0, -999.0];
        let moved =
            build_joint_representation(&scrambled, &prior, &a_target, &vocab, &params).unwrap();
        assert_eq!(base, moved);
    }

    #[test]
    fn joint_representation_rejects_wrong_shapes() {
        let vocab = small_vocab();
        let params = ProjectionParams::random(2, 2, 3);
        let current = token_set(&vocab, 3, 1.0); // wrong width
        let prior = token_set(&vocab, 2, -1.0);
        assert!(matches!(
            build_joint_representation(&current, &prior, &BTreeSet::new(), &vocab, &params),
            Err(FusionError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn empty_target_masks_everything() {
        let vocab = small_vocab();
        let params = ProjectionParams::identity(2);
        let current = token_set(&vocab, 2, 1.0);
        let prior = token_set(&vocab, 2, -1.0);
        let joint =
            build_joint_representation(&current, &prior, &BTreeSet::new(), &vocab, &params)
                .unwrap();
        assert!(joint.masked.iter().all(|&m| m));
        assert!(joint.vectors.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    fn tiny_tables(include_masked: bool) -> EmbedTables {
        let mut t = EmbedTables::random(4, 2, 10, 16, 123);
        t.include_masked = include_masked;
        t
    }

    fn tiny_joint(vocab: &RegionVocabulary) -> JointRepresentation {
        JointRepresentation {
            width: 2,
            vectors: (0..vocab.len()).map(|i| vec![i as f64, 1.0]).collect(),
            masked: vec![false, true, false],
        }
    }

    #[test]
    fn assembly_layout_and_embedding_sum() {
        let vocab = small_vocab();
        let tables = tiny_tables(true);
        let joint = tiny_joint(&vocab);
        let seq = assemble_multimodal(&joint, &vocab, &[4, 7], &tables).unwrap();

        assert_eq!(seq.len(), 5); // 3 visual + 2 text
        assert_eq!(seq.visual_len(), 3);
        assert_eq!(seq.visual_slots[1], VisualSlot { region: "left lung".into(), masked: true });
        assert!(matches!(seq.positions[2].segment, Segment::Visual));
        assert!(matches!(seq.positions[3].segment, Segment::Text));
        for (i, pos) in seq.positions.iter().enumerate() {
            assert_eq!(pos.index, i);
            assert_eq!(pos.vector.len(), 4);
        }

        // Position 3 is the first text token: table row + positional + segment.
        let want: Vec<f64> = tables
            .token_table
            .row(4)
            .iter()
            .zip(tables.position_table.row(3))
            .zip(&tables.segment_text)
            .map(|((c, p), s)| c + p + s)
            .collect();
        assert_eq!(seq.positions[3].vector, want);

        // Position 0 is the adapted first region.
        let adapted = tables.visual_adapter.matvec(&joint.vectors[0]).unwrap();
        let want: Vec<f64> = adapted
            .iter()
            .zip(tables.position_table.row(0))
            .zip(&tables.segment_visual)
            .map(|((c, p), s)| c + p + s)
            .collect();
        assert_eq!(seq.positions[0].vector, want);
    }

    #[test]
    fn assembly_can_drop_masked_slots() {
        let vocab = small_vocab();
        let tables = tiny_tables(false);
        let joint = tiny_joint(&vocab);
        let seq = assemble_multimodal(&joint, &vocab, &[], &tables).unwrap();
        assert_eq!(seq.visual_len(), 2);
        assert!(seq.visual_slots.iter().all(|s| !s.masked));
    }

    #[test]
    fn assembly_rejects_overflow_and_bad_ids() {
        let vocab = small_vocab();
        let joint = tiny_joint(&vocab);
        let tables = tiny_tables(true);

        assert!(matches!(
            assemble_multimodal(&joint, &vocab, &[99], &tables),
            Err(FusionError::TokenIdOutOfRange { id: 99, .. })
        ));

        let mut cramped = tiny_tables(true);
        cramped.position_table = Matrix::random(4, 4, 0.1, &mut rng_from_seed(1));
        assert!(matches!(
            assemble_multimodal(&joint, &vocab, &[0, 1], &cramped),
            Err(FusionError::PositionOverflow { needed: 5, max: 4 })
        ));
    }

    #[test]
    fn template_generator_covers_unmasked_slots_in_order() {
        let vocab = small_vocab();
        let tables = tiny_tables(true);
        let joint = tiny_joint(&vocab);
        let seq = assemble_multimodal(&joint, &vocab, &[], &tables).unwrap();
        let text = TemplateGenerator.generate(&seq);
        assert_eq!(
            text,
            "The abdomen is unremarkable. The right lung is unremarkable."
        );

        let all_masked = JointRepresentation {
            width: 2,
            vectors: joint.vectors.clone(),
            masked: vec![true; 3],
        };
        let seq = assemble_multimodal(&all_masked, &vocab, &[], &tables).unwrap();
        assert_eq!(TemplateGenerator.generate(&seq), "");
    }

    #[test]
    fn params_validation_catches_mismatches() {
        let mut params = ProjectionParams::identity(2);
        params.b1.pop();
        assert!(params.validate().is_err());

        let mut params = ProjectionParams::identity(2);
        params.epsilon = -1.0;
        assert!(matches!(
            params.validate(),
            Err(FusionError::NegativeEpsilon(_))
        ));

        let mut params = ProjectionParams::identity(2);
        params.w1.data.pop();
        assert!(params.validate().is_err());
    }

    #[test]
    fn random_params_are_seed_stable() {
        assert_eq!(
            ProjectionParams::random(4, 3, 9),
            ProjectionParams::random(4, 3, 9)
        );
        assert_ne!(
            ProjectionParams::random(4, 3, 9),
            ProjectionParams::random(4, 3, 10)
        );
    }
}
