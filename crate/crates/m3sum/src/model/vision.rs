//! Visual encoder over pre-extracted region features. Each region row gets
//! three additive embeddings before self-attention: a linear map of its
//! normalized box coordinates, an image-index embedding (sequence order),
//! and a region-index embedding.

use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::encoder::self_attn_stack;
use crate::model::{Bound, ModelConfig};

/// Region features for one sample: `n` images, `m` regions each, flattened
/// row-major to `n*m` rows.
#[derive(Debug, Clone)]
pub struct VisionInput<S: Scalar> {
    /// `[n*m, d_v]` region descriptors.
    pub features: Tensor<S>,
    /// `[n*m, 4]` normalized box coordinates in `[0, 1]`.
    pub boxes: Tensor<S>,
    /// `n*m` entries; 0 removes the region from attention and pooling.
    pub mask: Vec<u8>,
    pub n_images: usize,
    pub m_regions: usize,
}

impl<S: Scalar> VisionInput<S> {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        if self.n_images > cfg.n_images || self.m_regions > cfg.m_regions {
            return Err(Error::config(format!(
                "vision grid {}x{} exceeds configured {}x{}",
                self.n_images, self.m_regions, cfg.n_images, cfg.m_regions
            )));
        }
        if self.n_images == 0 || self.m_regions == 0 {
            return Err(Error::data("vision input with zero images or regions"));
        }
        let rows = self.n_images * self.m_regions;
        if self.features.shape() != [rows, cfg.d_v] {
            return Err(Error::shape(
                "vision-input",
                format!("features {:?}, want [{rows}, {}]", self.features.shape(), cfg.d_v),
            ));
        }
        if self.boxes.shape() != [rows, 4] {
            return Err(Error::shape(
                "vision-input",
                format!("boxes {:?}, want [{rows}, 4]", self.boxes.shape()),
            ));
        }
        if self.mask.len() != rows {
            return Err(Error::shape(
                "vision-input",
                format!("mask len {} vs {rows} rows", self.mask.len()),
            ));
        }
        if !self.features.all_finite() {
            return Err(Error::data("non-finite vision feature"));
        }
        for &b in self.boxes.data() {
            let b = b.to_f64();
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::data(format!("box coordinate {b} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn cast<T: Scalar>(&self) -> VisionInput<T> {
        VisionInput {
            features: self.features.cast(),
            boxes: self.boxes.cast(),
            mask: self.mask.clone(),
            n_images: self.n_images,
            m_regions: self.m_regions,
        }
    }
}

/// Encode region features into `[n*m, d_v]` states.
pub fn encode_vision<S: Scalar>(
    g: &mut Graph<S>,
    p: &Bound,
    cfg: &ModelConfig,
    vin: &VisionInput<S>,
) -> Result<Var> {
    vin.validate(cfg)?;
    let (n, m) = (vin.n_images, vin.m_regions);

    let feats = g.constant(vin.features.clone())?;
    let boxes = g.constant(vin.boxes.clone())?;
    let box_emb = g.matmul(boxes, p.var("vis.box.w"))?;

    // Row (i, j) picks image embedding i and region embedding j.
    let img_ids: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat(i).take(m)).collect();
    let reg_ids: Vec<usize> = (0..n).flat_map(|_| 0..m).collect();
    let img_emb = g.embedding(p.var("vis.img"), &img_ids)?;
    let reg_emb = g.embedding(p.var("vis.reg"), &reg_ids)?;

    let h = g.add(feats, box_emb)?;
    let h = g.add(h, img_emb)?;
    let h = g.add(h, reg_emb)?;
    self_attn_stack(g, p, cfg, "vis", cfg.n_vis, h, &vin.mask)
}
