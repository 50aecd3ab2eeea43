use ndarray::{Array2, Array3, Array4};

use super::block::{stage_backward, stage_forward, BlockCache};
use super::config::ModelConfig;
use super::feature::FeatureMap;
use super::layers::{
    linear_backward, linear_forward, patch_embed_backward, patch_embed_forward,
    patch_expand_backward, patch_expand_forward, patch_merge_backward, patch_merge_forward,
    sfb_backward, sfb_forward,
};
use super::weights::{dec_section, enc_section, BOTTLENECK};
use super::ModelWeights;
use crate::error::{Error, Result};
use crate::geometry::{FlowMap, Image, SegMask};

/// Segmentation logits, shape `2×3×H×W`: one 3-way classifier per flow component.
#[derive(Debug, Clone, PartialEq)]
pub struct SegLogits {
    data: Array4<f64>,
}

impl SegLogits {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        let (g, c, h, w) = data.dim();
        if g != 2 || c != 3 || h == 0 || w == 0 {
            return Err(Error::shape("2×3×H×W", format!("{g}×{c}×{h}×{w}")));
        }
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn height(&self) -> usize {
        self.data.dim().2
    }

    pub fn width(&self) -> usize {
        self.data.dim().3
    }

    /// Most likely class per component and pixel.
    pub fn argmax(&self) -> SegMask {
        let (_, _, h, w) = self.data.dim();
        let mask = Array3::from_shape_fn((2, h, w), |(g, i, j)| {
            let mut best = 0;
            for c in 1..3 {
                if self.data[[g, c, i, j]] > self.data[[g, best, i, j]] {
                    best = c;
                }
            }
            best as u8
        });
        SegMask::new(mask).expect("classes in range")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub flows: Vec<FlowMap>,
    pub seg_logits: Vec<SegLogits>,
}

/// Token grid and width of one stage output, recorded during the forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageShape {
    pub name: String,
    pub grid: (usize, usize),
    pub tokens: usize,
    pub channels: usize,
}

impl StageShape {
    fn of(name: impl Into<String>, fm: &FeatureMap) -> Self {
        Self {
            name: name.into(),
            grid: fm.grid,
            tokens: fm.data.nrows(),
            channels: fm.channels(),
        }
    }
}

struct EncoderLevel {
    blocks: Vec<BlockCache>,
    gathered: Array2<f64>,
}

struct DecoderLevel {
    coarse: FeatureMap,
    fused_input: Array2<f64>,
    blocks: Vec<BlockCache>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Tape {
    batch: usize,
    patches: Array2<f64>,
    encoder: Vec<EncoderLevel>,
    bottleneck: Vec<BlockCache>,
    /// Decoder levels in execution order (deepest first).
    decoder: Vec<DecoderLevel>,
    decoded: FeatureMap,
    full_res: Array2<f64>,
    shapes: Vec<StageShape>,
}

impl Tape {
    /// Shapes of the embedding, every encoder stage and merge, the bottleneck and every
    /// decoder stage, in execution order.
    pub fn stage_shapes(&self) -> &[StageShape] {
        &self.shapes
    }
}

fn check_images(config: &ModelConfig, images: &[Image]) -> Result<()> {
    if images.is_empty() {
        return Err(Error::InvalidInput("empty image batch".into()));
    }
    let expected = (config.in_channels, config.input_h, config.input_w);
    for im in images {
        if im.data().dim() != expected {
            return Err(Error::shape(
                format!("{}×{}×{}", expected.0, expected.1, expected.2),
                format!("{:?}", im.data().dim()),
            ));
        }
    }
    Ok(())
}

/// Inference forward pass.
pub fn forward(w: &ModelWeights, config: &ModelConfig, images: &[Image]) -> Result<Prediction> {
    forward_with_tape(w, config, images).map(|(p, _)| p)
}

pub fn forward_with_tape(
    w: &ModelWeights,
    config: &ModelConfig,
    images: &[Image],
) -> Result<(Prediction, Tape)> {
    config.validate()?;
    check_images(config, images)?;
    let batch = images.len();
    let (mut x, patches) = patch_embed_forward(w, "embed", images, config.patch_size)?;
    let mut shapes = vec![StageShape::of("embed", &x)];

    let mut encoder = Vec::with_capacity(config.num_stages());
    let mut skips = Vec::with_capacity(config.num_stages());
    for (level, &depth) in config.stage_depths.iter().enumerate() {
        let section = enc_section(level);
        let (y, blocks) = stage_forward(w, config, &section, level, depth, x)?;
        let (merged, gathered) = patch_merge_forward(w, &format!("{section}.merge"), &y)?;
        shapes.push(StageShape::of(section.clone(), &y));
        shapes.push(StageShape::of(format!("{section}.merge"), &merged));
        skips.push(y);
        encoder.push(EncoderLevel { blocks, gathered });
        x = merged;
    }

    let stages = config.num_stages();
    let (mut x, bottleneck) =
        stage_forward(w, config, BOTTLENECK, stages, config.bottleneck_depth, x)?;
    shapes.push(StageShape::of(BOTTLENECK, &x));

    let mut decoder = Vec::with_capacity(stages);
    for level in (0..stages).rev() {
        let section = dec_section(level);
        let up = patch_expand_forward(w, &format!("{section}.expand"), &x, 2)?;
        let (fused, fused_input) =
            sfb_forward(w, &format!("{section}.sfb"), &skips[level].data, &up.data)?;
        let fused = FeatureMap::grid(fused, batch, up.grid)?;
        let (y, blocks) =
            stage_forward(w, config, &section, level, config.stage_depths[level], fused)?;
        shapes.push(StageShape::of(section.clone(), &y));
        decoder.push(DecoderLevel {
            coarse: x,
            fused_input,
            blocks,
        });
        x = y;
    }

    let full = patch_expand_forward(w, "final_expand", &x, config.patch_size)?;
    let flow_rows = linear_forward(w, "head.flow", &full.data);
    let seg_rows = linear_forward(w, "head.seg", &full.data);
    let (h, wd) = (config.input_h, config.input_w);
    let hw = h * wd;
    let mut flows = Vec::with_capacity(batch);
    let mut seg_logits = Vec::with_capacity(batch);
    for b in 0..batch {
        let f = Array3::from_shape_fn((2, h, wd), |(c, i, j)| flow_rows[[b * hw + i * wd + j, c]]);
        flows.push(FlowMap::new(f)?);
        let s = Array4::from_shape_fn((2, 3, h, wd), |(g, c, i, j)| {
            seg_rows[[b * hw + i * wd + j, g * 3 + c]]
        });
        seg_logits.push(SegLogits::new(s)?);
    }
    Ok((
        Prediction { flows, seg_logits },
        Tape {
            batch,
            patches,
            encoder,
            bottleneck,
            decoder,
            decoded: x,
            full_res: full.data,
            shapes,
        },
    ))
}

/// Gradients of a scalar loss w.r.t. every parameter, given its gradients w.r.t. the
/// flows (`2×H×W` per sample) and optionally the segmentation logits (`2×3×H×W`).
/// Without logit gradients the segmentation head receives zero gradient.
pub fn backward(
    w: &ModelWeights,
    config: &ModelConfig,
    tape: &Tape,
    d_flows: &[Array3<f64>],
    d_logits: Option<&[Array4<f64>]>,
) -> Result<ModelWeights> {
    let (h, wd) = (config.input_h, config.input_w);
    let hw = h * wd;
    if d_flows.len() != tape.batch || d_logits.is_some_and(|d| d.len() != tape.batch) {
        return Err(Error::shape(
            format!("{} gradient maps", tape.batch),
            format!("{}", d_flows.len()),
        ));
    }
    let mut grads = w.zeros_like();
    let mut d_flow_rows = Array2::zeros((tape.batch * hw, 2));
    for (b, d) in d_flows.iter().enumerate() {
        if d.dim() != (2, h, wd) {
            return Err(Error::shape(format!("2×{h}×{wd}"), format!("{:?}", d.dim())));
        }
        for ((c, i, j), v) in d.indexed_iter() {
            d_flow_rows[[b * hw + i * wd + j, c]] = *v;
        }
    }
    let mut d_full = linear_backward(w, &mut grads, "head.flow", &tape.full_res, &d_flow_rows);
    if let Some(d_logits) = d_logits {
        let mut d_seg_rows = Array2::zeros((tape.batch * hw, 6));
        for (b, d) in d_logits.iter().enumerate() {
            if d.dim() != (2, 3, h, wd) {
                return Err(Error::shape(format!("2×3×{h}×{wd}"), format!("{:?}", d.dim())));
            }
            for ((g, c, i, j), v) in d.indexed_iter() {
                d_seg_rows[[b * hw + i * wd + j, g * 3 + c]] = *v;
            }
        }
        d_full += &linear_backward(w, &mut grads, "head.seg", &tape.full_res, &d_seg_rows);
    }

    let mut d_x = patch_expand_backward(
        w,
        &mut grads,
        "final_expand",
        &tape.decoded,
        config.patch_size,
        &d_full,
    );

    let stages = config.num_stages();
    let mut d_skips: Vec<Option<Array2<f64>>> = (0..stages).map(|_| None).collect();
    for (k, dec) in tape.decoder.iter().enumerate().rev() {
        let level = stages - 1 - k;
        let section = dec_section(level);
        let d_fused = stage_backward(w, &mut grads, &section, &dec.blocks, d_x);
        let (d_skip, d_up) =
            sfb_backward(w, &mut grads, &format!("{section}.sfb"), &dec.fused_input, &d_fused);
        d_skips[level] = Some(d_skip);
        d_x = patch_expand_backward(w, &mut grads, &format!("{section}.expand"), &dec.coarse, 2, &d_up);
    }

    d_x = stage_backward(w, &mut grads, BOTTLENECK, &tape.bottleneck, d_x);

    for level in (0..stages).rev() {
        let section = enc_section(level);
        let enc = &tape.encoder[level];
        let mut d = patch_merge_backward(
            w,
            &mut grads,
            &format!("{section}.merge"),
            &enc.gathered,
            &d_x,
            tape.batch,
            config.grid(level),
        );
        if let Some(s) = d_skips[level].take() {
            d += &s;
        }
        d_x = stage_backward(w, &mut grads, &section, &enc.blocks, d);
    }
    patch_embed_backward(w, &mut grads, "embed", &tape.patches, &d_x);
    Ok(grads)
}
