use crate::error::{shape_err, Result};
use crate::raster::{Image, RenderOutput};

/// Loss value split into its terms, with the per-pixel gradients that feed
/// [`render_backward`](crate::raster::render_backward).
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub color_loss: f64,
    /// Unweighted mean squared feature error (zero without ground truth).
    pub feature_loss: f64,
    pub grad_color: Image,
    pub grad_feature: Image,
}

/// `mean|C − C_gt| + λ_f · mean(F − F_gt)²`. Without a ground-truth
/// feature map, or with `λ_f = 0`, the feature term and its gradient vanish.
/// The L1 subgradient at zero residual is taken as zero.
pub fn reconstruction_loss(
    render: &RenderOutput,
    gt_image: &Image,
    gt_features: Option<&Image>,
    feature_weight: f64,
) -> Result<LossOutput> {
    if !render.color.same_shape(gt_image) {
        return Err(shape_err(format!(
            "render is {}x{}x{}, ground-truth image {}x{}x{}",
            render.color.width,
            render.color.height,
            render.color.channels,
            gt_image.width,
            gt_image.height,
            gt_image.channels
        )));
    }
    if let Some(f) = gt_features {
        if !render.feature.same_shape(f) {
            return Err(shape_err(format!(
                "feature render is {}x{}x{}, ground truth {}x{}x{}",
                render.feature.width,
                render.feature.height,
                render.feature.channels,
                f.width,
                f.height,
                f.channels
            )));
        }
    }
    let nc = render.color.data.len().max(1) as f64;
    let mut grad_color = Image::zeros(gt_image.width, gt_image.height, 3);
    let mut color_loss = 0.0;
    for ((g, c), t) in grad_color
        .data
        .iter_mut()
        .zip(&render.color.data)
        .zip(&gt_image.data)
    {
        let r = c - t;
        color_loss += r.abs();
        *g = if r > 0.0 {
            1.0 / nc
        } else if r < 0.0 {
            -1.0 / nc
        } else {
            0.0
        };
    }
    color_loss /= nc;

    let mut grad_feature = Image::zeros(
        render.feature.width,
        render.feature.height,
        render.feature.channels,
    );
    let mut feature_loss = 0.0;
    if let Some(gt) = gt_features {
        let nf = render.feature.data.len().max(1) as f64;
        let use_grad = feature_weight != 0.0;
        for ((g, f), t) in grad_feature
            .data
            .iter_mut()
            .zip(&render.feature.data)
            .zip(&gt.data)
        {
            let r = f - t;
            feature_loss += r * r;
            if use_grad {
                *g = 2.0 * feature_weight * r / nf;
            }
        }
        feature_loss /= nf;
    }
    Ok(LossOutput {
        loss: color_loss + feature_weight * feature_loss,
        color_loss,
        feature_loss,
        grad_color,
        grad_feature,
    })
}
