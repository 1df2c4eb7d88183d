//! Deformation MLP basics: identity at initialization, a constant
//! translation, and gradients through the field.
//!
//! cargo run --release --example deformation_field

use nalgebra::Vector3;
use semsplat::deformation::{
    deform_all, deformation_backward, DeformationField, FourierEncodingConfig,
};
use semsplat::scene::{init_random, Aabb};

fn main() -> semsplat::Result<()> {
    let enc = FourierEncodingConfig::default();
    let mut field = DeformationField::new(enc, 8, 256, 0)?;
    println!(
        "field: depth {}, width {}, {} parameters, input length {}",
        field.depth(),
        field.width(),
        field.num_params(),
        enc.input_len()
    );

    let x = Vector3::new(0.1, -0.2, 0.3);
    let d = field.deform(&x, 0.7);
    println!(
        "fresh field at t=0.7: dx {:?}, dr {:?}, ds {:?}",
        d.dx.as_slice(),
        d.dr.as_slice(),
        d.ds.as_slice()
    );

    field.set_constant_translation([0.0, 0.0, 0.25]);
    println!(
        "constant translation: dx {:?}",
        field.deform(&x, 0.2).dx.as_slice()
    );

    let g = init_random(100, Aabb::unit(), 4, 1)?;
    let offsets = deform_all(&g, &field, 0.5);
    println!("deformed {} Gaussians", offsets.len());

    let up = vec![0.0; 3 * g.len()];
    let mut grad_pos = up.clone();
    grad_pos
        .iter_mut()
        .skip(2)
        .step_by(3)
        .for_each(|v| *v = 1.0);
    let back = deformation_backward(&g, &field, 0.5, &grad_pos, &vec![0.0; 4 * g.len()], &up);
    let norm = back.param_grads.iter().map(|v| v * v).sum::<f64>().sqrt();
    println!("|dL/dθ| for L = Σ z-offsets: {norm:.3}");
    Ok(())
}
