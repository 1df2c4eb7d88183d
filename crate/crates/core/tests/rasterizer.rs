mod common;

use common::{front_camera, random_scene};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use semsplat::raster::{
    contribution_weights, render, render_backward, render_brute_force, Camera, Image, RenderOptions,
};
use semsplat::scene::{logit, GaussianSet};

fn opts() -> RenderOptions {
    RenderOptions {
        background: [0.2, 0.4, 0.6],
        ..Default::default()
    }
}

/// One isotropic Gaussian on the optical axis at depth 2, with a camera
/// whose principal point is pixel (16, 16).
fn single_on_axis(opacity: f64) -> (GaussianSet, Camera) {
    let cam = Camera::new(
        40.0,
        40.0,
        16.0,
        16.0,
        32,
        32,
        Matrix3::identity(),
        Vector3::zeros(),
    )
    .unwrap();
    let g = GaussianSet::from_parts(
        vec![0.0, 0.0, 2.0],
        vec![1.0, 0.0, 0.0, 0.0],
        vec![(0.1f64).ln(); 3],
        vec![logit(opacity)],
        vec![logit(0.3), logit(0.6), logit(0.9)],
        vec![1.0, -2.0],
        2,
    )
    .unwrap();
    (g, cam)
}

#[test]
fn empty_scene_renders_background() {
    let cam = front_camera(20, 10);
    let out = render(&GaussianSet::empty(4), &cam, &RenderOptions::default());
    assert!(out.color.data.iter().all(|v| *v == 0.0));
    assert!(out.alpha.data.iter().all(|v| *v == 0.0));
    assert!(out.feature.data.iter().all(|v| *v == 0.0));
    assert_eq!(out.feature.channels, 4);
    assert!(contribution_weights(&GaussianSet::empty(4), &cam, (3, 3))
        .unwrap()
        .is_empty());
}

#[test]
fn single_opaque_gaussian_center_pixel() {
    let (g, cam) = single_on_axis(0.99);
    let o = opts();
    let out = render(&g, &cam, &o);
    let c = out.color.pixel(16, 16);
    let want = [0.3, 0.6, 0.9];
    for k in 0..3 {
        assert!((c[k] - (0.99 * want[k] + 0.01 * o.background[k])).abs() < 1e-12);
    }
    let f = out.feature.pixel(16, 16);
    assert!((f[0] - 0.99).abs() < 1e-12 && (f[1] + 1.98).abs() < 1e-12);

    let w = contribution_weights(&g, &cam, (16, 16)).unwrap();
    assert_eq!(w.len(), 1);
    assert_eq!(w[0].gaussian_id, 0);
    assert!((w[0].weight - 0.99).abs() < 1e-12);
    assert!(contribution_weights(&g, &cam, (32, 0)).is_err());
}

#[test]
fn brute_force_alpha_by_hand() {
    let (g, cam) = single_on_axis(0.7);
    let out = render_brute_force(&g, &cam, &RenderOptions::default());
    // On-axis isotropic Gaussian: screen variance (f·s/z)² + 0.3 on both axes.
    let var = (40.0f64 * 0.1 / 2.0).powi(2) + 0.3;
    for (x, y) in [(16usize, 16usize), (17, 16), (18, 19), (12, 14), (20, 20)] {
        let d2 = (x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2);
        let alpha = 0.7 * (-0.5 * d2 / var).exp();
        let want = if alpha < 1.0 / 255.0 { 0.0 } else { alpha };
        assert!(
            (out.alpha.pixel(x, y)[0] - want).abs() < 1e-10,
            "pixel ({x},{y})"
        );
    }
    let again = render_brute_force(&g, &cam, &RenderOptions::default());
    assert_eq!(out, again);
}

#[test]
fn tiled_matches_brute_force_on_random_scenes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..50 {
        let n = rng.random_range(1..=100);
        let g = random_scene(n, 8, seed);
        let cam = front_camera(64, 64);
        let o = RenderOptions {
            contributions_top_k: Some(8),
            ..opts()
        };
        let a = render(&g, &cam, &o);
        let b = render_brute_force(&g, &cam, &o);
        assert!(a.color.max_abs_diff(&b.color) <= 1e-5, "seed {seed} color");
        assert!(
            a.feature.max_abs_diff(&b.feature) <= 1e-5,
            "seed {seed} feature"
        );
        assert!(a.alpha.max_abs_diff(&b.alpha) <= 1e-5, "seed {seed} alpha");
    }
}

#[test]
fn parallel_and_sequential_agree_bitwise() {
    let g = random_scene(80, 5, 3);
    let cam = front_camera(48, 40);
    let par = render(&g, &cam, &opts());
    let seq = render(
        &g,
        &cam,
        &RenderOptions {
            parallel: false,
            ..opts()
        },
    );
    assert_eq!(par, seq);
}

#[test]
fn compositing_invariants() {
    for seed in 0..20 {
        let mut g = random_scene(60, 3, 100 + seed);
        let cam = front_camera(40, 40);
        let out = render(&g, &cam, &opts());
        assert!(out.alpha.data.iter().all(|a| (0.0..=1.0).contains(a)));
        for y in (0..40).step_by(3) {
            for x in (0..40).step_by(3) {
                let w = contribution_weights(&g, &cam, (x, y)).unwrap();
                let sum: f64 = w.iter().map(|c| c.weight).sum();
                assert!((sum - out.alpha.pixel(x, y)[0]).abs() < 1e-6);
                assert!(w.windows(2).all(|p| p[0].weight >= p[1].weight));
            }
        }
        // Constant features composite to alpha·f.
        let f = [0.5, -1.5, 2.0];
        for i in 0..g.len() {
            g.features[3 * i..3 * i + 3].copy_from_slice(&f);
        }
        let out = render(&g, &cam, &opts());
        for p in 0..40 * 40 {
            for k in 0..3 {
                assert!((out.feature.data[3 * p + k] - out.alpha.data[p] * f[k]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn storage_order_does_not_matter() {
    let g = random_scene(30, 4, 9);
    let cam = front_camera(32, 32);
    let mut ids: Vec<usize> = (0..g.len()).collect();
    ids.swap(3, 17);
    ids.reverse();
    let shuffled = g.subset(&ids);
    let a = render(&g, &cam, &opts());
    let b = render(&shuffled, &cam, &opts());
    assert_eq!(a.color, b.color);
    assert_eq!(a.feature, b.feature);
    assert_eq!(a.alpha, b.alpha);
}

/// Random upstream images; the loss is Σ grad·render.
fn upstream(cam: &Camera, c: usize, seed: u64) -> (Image, Image, Image) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = |ch: usize| {
        let data = (0..cam.num_pixels() * ch)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Image::from_data(cam.width, cam.height, ch, data).unwrap()
    };
    (img(3), img(c), img(1))
}

fn linear_loss(g: &GaussianSet, cam: &Camera, up: &(Image, Image, Image)) -> f64 {
    let out = render(g, cam, &opts());
    let dot = |a: &Image, b: &Image| a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum::<f64>();
    dot(&out.color, &up.0) + dot(&out.feature, &up.1) + dot(&out.alpha, &up.2)
}

#[test]
fn backward_zero_upstream_gives_zero() {
    let g = random_scene(10, 2, 4);
    let cam = front_camera(16, 16);
    let z = |c| Image::zeros(16, 16, c);
    let grads = render_backward(&g, &cam, &opts(), &z(3), &z(2), &z(1)).unwrap();
    assert!(grads.gaussians.is_zero());
    assert!(render_backward(&g, &cam, &opts(), &z(3), &z(3), &z(1)).is_err());
}

#[test]
fn color_gradient_is_contribution_weight() {
    let g = random_scene(12, 2, 5);
    let cam = front_camera(16, 16);
    let (x, y) = (8, 7);
    let mut gc = Image::zeros(16, 16, 3);
    gc.pixel_mut(x, y)[1] = 1.0;
    let grads = render_backward(
        &g,
        &cam,
        &opts(),
        &gc,
        &Image::zeros(16, 16, 2),
        &Image::zeros(16, 16, 1),
    )
    .unwrap();
    let weights = contribution_weights(&g, &cam, (x, y)).unwrap();
    assert!(!weights.is_empty());
    for w in &weights {
        let c = g.color(w.gaussian_id)[1];
        // Chain rule through the sigmoid on the stored logit.
        let dc = grads.gaussians.color_logits[3 * w.gaussian_id + 1] / (c * (1.0 - c));
        assert!((dc - w.weight).abs() < 1e-12);
    }
}

#[test]
fn backward_matches_finite_differences() {
    let cam = Camera::look_at(
        Vector3::new(0.2, -2.0, 0.3),
        Vector3::zeros(),
        Vector3::z(),
        30.0,
        8,
        8,
    )
    .unwrap();
    let mut g = random_scene(3, 2, 77);
    // Keep the three splats on screen with moderate opacity.
    for i in 0..3 {
        for a in 0..3 {
            g.positions[3 * i + a] *= 0.2;
            g.log_scales[3 * i + a] = -1.5 - 0.2 * i as f64 - 0.3 * a as f64;
        }
        g.opacity_logits[i] = logit(0.5 + 0.1 * i as f64);
    }
    let up = upstream(&cam, 2, 8);
    let grads = render_backward(&g, &cam, &opts(), &up.0, &up.1, &up.2).unwrap();
    let h = 1e-6;
    let analytic = grads.gaussians.clone();
    let mut max_err: f64 = 0.0;
    let groups: [(&str, fn(&mut GaussianSet) -> &mut Vec<f64>, &Vec<f64>); 6] = [
        ("positions", |g| &mut g.positions, &analytic.positions),
        ("rotations", |g| &mut g.rotations, &analytic.rotations),
        ("log_scales", |g| &mut g.log_scales, &analytic.log_scales),
        (
            "opacity",
            |g| &mut g.opacity_logits,
            &analytic.opacity_logits,
        ),
        ("colors", |g| &mut g.color_logits, &analytic.color_logits),
        ("features", |g| &mut g.features, &analytic.features),
    ];
    for (name, field, ana) in groups {
        let scale = ana.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..ana.len() {
            let mut p = g.clone();
            field(&mut p)[k] += h;
            let mut m = g.clone();
            field(&mut m)[k] -= h;
            let fd = (linear_loss(&p, &cam, &up) - linear_loss(&m, &cam, &up)) / (2.0 * h);
            let err = (fd - ana[k]).abs() / fd.abs().max(ana[k].abs()).max(1e-3 * scale).max(1e-4);
            assert!(err < 1e-5, "{name}[{k}]: fd {fd} analytic {}", ana[k]);
            max_err = max_err.max(err);
        }
    }
    assert!(max_err < 1e-5);
}
