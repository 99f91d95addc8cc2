use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Fusion, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamBundle};

/// Fusion layer for one side.
#[derive(Clone, Debug, PartialEq)]
pub enum FusionParams {
    /// `φ(W [video_pref ; id_pref] + b)`, `W` is D×2D, `b` is 1×D.
    NeuralNet { weight: Matrix, bias: Matrix },
    /// `W_video · video_pref + W_ids · id_pref`, both D×D.
    TransformSum { video: Matrix, ids: Matrix },
}

/// Parameters of one propagation side.
///
/// The user side aggregates hashtag neighbors and attends over videos with
/// hashtag queries; the hashtag side is its mirror with user neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct SideParams {
    /// Neighbor ID embedding → this side's space (D×D).
    pub id_transform: Matrix,
    /// Video feature → attention space (D×D_v).
    pub attn_map: Matrix,
    /// Similarity layer weights over `[q ; x ; q ⊙ x]` (1×3D).
    pub attn_vec: Matrix,
    /// Similarity layer bias (1×1).
    pub attn_bias: Matrix,
    /// Video feature → this side's space (D×D_v).
    pub video_transform: Matrix,
    pub fusion: FusionParams,
}

/// Output layers producing user-specific video and hashtag vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputParams {
    pub video_weight: Matrix,
    pub video_user: Matrix,
    pub video_bias: Matrix,
    pub hashtag_weight: Matrix,
    pub hashtag_user: Matrix,
    pub hashtag_bias: Matrix,
}

/// Every learnable tensor of the model. Also used as the gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub user_emb: Matrix,
    pub hashtag_emb: Matrix,
    pub user_side: SideParams,
    pub hashtag_side: SideParams,
    pub output: OutputParams,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    User,
    Hashtag,
}

impl FusionParams {
    fn zeros(fusion: Fusion, dim: usize) -> Self {
        match fusion {
            Fusion::NeuralNet => FusionParams::NeuralNet {
                weight: Matrix::zeros(dim, 2 * dim),
                bias: Matrix::zeros(1, dim),
            },
            Fusion::TransformSum => FusionParams::TransformSum {
                video: Matrix::zeros(dim, dim),
                ids: Matrix::zeros(dim, dim),
            },
        }
    }
}

impl SideParams {
    fn zeros(config: &ModelConfig) -> Self {
        let (d, dv) = (config.dim, config.d_v);
        SideParams {
            id_transform: Matrix::zeros(d, d),
            attn_map: Matrix::zeros(d, dv),
            attn_vec: Matrix::zeros(1, 3 * d),
            attn_bias: Matrix::zeros(1, 1),
            video_transform: Matrix::zeros(d, dv),
            fusion: FusionParams::zeros(config.fusion, d),
        }
    }

    fn names(&self, side: Side) -> [&'static str; 7] {
        let (base, fusion) = match side {
            Side::User => (
                ["w_h_to_u", "w_attn_uh", "g_uh_w", "g_uh_b", "w_v_to_u"],
                match self.fusion {
                    FusionParams::NeuralNet { .. } => ["w_nn_u", "b_nn_u"],
                    FusionParams::TransformSum { .. } => ["w_sum_vu", "w_sum_hu"],
                },
            ),
            Side::Hashtag => (
                ["w_u_to_h", "w_attn_hv", "g_hv_w", "g_hv_b", "w_v_to_h"],
                match self.fusion {
                    FusionParams::NeuralNet { .. } => ["w_nn_h", "b_nn_h"],
                    FusionParams::TransformSum { .. } => ["w_sum_vh", "w_sum_uh"],
                },
            ),
        };
        [
            base[0], base[1], base[2], base[3], base[4], fusion[0], fusion[1],
        ]
    }

    fn push_blocks<'a>(&'a self, side: Side, out: &mut Vec<(&'static str, &'a Matrix)>) {
        let names = self.names(side);
        let (f0, f1) = match &self.fusion {
            FusionParams::NeuralNet { weight, bias } => (weight, bias),
            FusionParams::TransformSum { video, ids } => (video, ids),
        };
        let mats = [
            &self.id_transform,
            &self.attn_map,
            &self.attn_vec,
            &self.attn_bias,
            &self.video_transform,
            f0,
            f1,
        ];
        out.extend(names.into_iter().zip(mats));
    }

    fn push_blocks_mut<'a>(
        &'a mut self,
        side: Side,
        out: &mut Vec<(&'static str, &'a mut Matrix)>,
    ) {
        let names = self.names(side);
        let (f0, f1) = match &mut self.fusion {
            FusionParams::NeuralNet { weight, bias } => (weight, bias),
            FusionParams::TransformSum { video, ids } => (video, ids),
        };
        let mats = [
            &mut self.id_transform,
            &mut self.attn_map,
            &mut self.attn_vec,
            &mut self.attn_bias,
            &mut self.video_transform,
            f0,
            f1,
        ];
        out.extend(names.into_iter().zip(mats));
    }
}

impl ModelParams {
    /// All-zero parameters shaped for `config` and the given entity counts.
    pub fn zeros(config: &ModelConfig, n_users: usize, n_hashtags: usize) -> Self {
        let (d, dv) = (config.dim, config.d_v);
        ModelParams {
            user_emb: Matrix::zeros(n_users, d),
            hashtag_emb: Matrix::zeros(n_hashtags, d),
            user_side: SideParams::zeros(config),
            hashtag_side: SideParams::zeros(config),
            output: OutputParams {
                video_weight: Matrix::zeros(d, dv),
                video_user: Matrix::zeros(d, d),
                video_bias: Matrix::zeros(1, d),
                hashtag_weight: Matrix::zeros(d, d),
                hashtag_user: Matrix::zeros(d, d),
                hashtag_bias: Matrix::zeros(1, d),
            },
        }
    }

    /// Every coordinate drawn from `N(0, std²)`, blocks filled in checkpoint order.
    pub fn gaussian<R: Rng + ?Sized>(
        config: &ModelConfig,
        n_users: usize,
        n_hashtags: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::InvalidConfig(format!("init std {std}: {e}")))?;
        let mut params = ModelParams::zeros(config, n_users, n_hashtags);
        for (_, block) in params.blocks_mut() {
            for v in block.data_mut() {
                *v = normal.sample(rng);
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, b) in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    /// Named parameter blocks in their canonical (checkpoint) order.
    pub fn blocks(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![
            ("user_emb", &self.user_emb),
            ("hashtag_emb", &self.hashtag_emb),
        ];
        self.user_side.push_blocks(Side::User, &mut out);
        self.hashtag_side.push_blocks(Side::Hashtag, &mut out);
        let o = &self.output;
        out.extend([
            ("w_v", &o.video_weight),
            ("w_u_v", &o.video_user),
            ("b_v", &o.video_bias),
            ("w_h", &o.hashtag_weight),
            ("w_u_h", &o.hashtag_user),
            ("b_h", &o.hashtag_bias),
        ]);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut Matrix)> {
        let mut out: Vec<(&'static str, &mut Matrix)> = vec![
            ("user_emb", &mut self.user_emb),
            ("hashtag_emb", &mut self.hashtag_emb),
        ];
        self.user_side.push_blocks_mut(Side::User, &mut out);
        self.hashtag_side.push_blocks_mut(Side::Hashtag, &mut out);
        let o = &mut self.output;
        out.extend([
            ("w_v", &mut o.video_weight),
            ("w_u_v", &mut o.video_user),
            ("b_v", &mut o.video_bias),
            ("w_h", &mut o.hashtag_weight),
            ("w_u_h", &mut o.hashtag_user),
            ("b_h", &mut o.hashtag_bias),
        ]);
        out
    }

    pub fn side(&self, side: Side) -> &SideParams {
        match side {
            Side::User => &self.user_side,
            Side::Hashtag => &self.hashtag_side,
        }
    }

    /// `self += scale · other`; shapes must match.
    pub fn add_scaled(&mut self, scale: f64, other: &ModelParams) {
        let theirs = other.blocks();
        for ((_, mine), (_, t)) in self.blocks_mut().into_iter().zip(theirs) {
            mine.add_scaled(scale, t);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, b) in self.blocks_mut() {
            b.scale(s);
        }
    }

    /// ‖Θ‖² over every block.
    pub fn sum_squares(&self) -> f64 {
        self.blocks().iter().map(|(_, b)| b.sum_squares()).sum()
    }

    /// Name of the first block holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.blocks()
            .into_iter()
            .find(|(_, b)| !b.is_finite())
            .map(|(name, _)| name)
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }

    /// Checks every block against the shapes `config` prescribes.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelParams::zeros(config, self.user_emb.rows(), self.hashtag_emb.rows());
        let want = expected.blocks();
        let have = self.blocks();
        if want.len() != have.len() {
            return Err(Error::InvalidConfig("parameter block count mismatch".into()));
        }
        for ((wn, wm), (hn, hm)) in want.iter().zip(&have) {
            if wn != hn || wm.shape() != hm.shape() {
                return Err(Error::Shape {
                    op: "ModelParams::check_shapes",
                    detail: format!(
                        "block {hn} is {:?}, expected {wn} {:?}",
                        hm.shape(),
                        wm.shape()
                    ),
                });
            }
        }
        Ok(())
    }

    fn locate(&self, mut index: usize) -> (usize, usize) {
        for (b, (_, m)) in self.blocks().iter().enumerate() {
            if index < m.len() {
                return (b, index);
            }
            index -= m.len();
        }
        panic!("parameter coordinate out of range");
    }
}

impl ParamBundle for ModelParams {
    fn num_coords(&self) -> usize {
        self.num_params()
    }

    fn coord(&self, index: usize) -> f64 {
        let (b, i) = self.locate(index);
        self.blocks()[b].1.data()[i]
    }

    fn set_coord(&mut self, index: usize, value: f64) {
        let (b, i) = self.locate(index);
        self.blocks_mut()[b].1.data_mut()[i] = value;
    }
}
