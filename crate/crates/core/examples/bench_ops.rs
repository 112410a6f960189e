//! Rough operator timings at experiment scale.

use std::time::Instant;

use nltg_core::gauss::PriorCovariance;
use nltg_core::image::{add_noise, clip_intensity, generate_phantom, NoiseModel, Phantom, PhantomKind};
use nltg_core::nonlocal::{build_weights, nl_gradient, nl_laplacian, PatchKernel};
use nltg_core::radon::{fbp, forward, FbpFilter, ScanGeometry};

fn main() {
    let size = 128;
    let phantom = generate_phantom(&Phantom {
        kind: PhantomKind::XcatLike,
        size,
        tumor: None,
        background_wave: None,
    });

    let g500 = ScanGeometry::standard(500, size);
    let t = Instant::now();
    let y500 = forward(&phantom, &g500).unwrap();
    println!("forward 500 angles: {:?}", t.elapsed());

    let noisy = add_noise(&y500.data, &NoiseModel { sigma: 5.0, seed: 1 });
    let mut y_ref = y500.clone();
    y_ref.data = noisy;
    let t = Instant::now();
    let u_ref = clip_intensity(&fbp(&y_ref, FbpFilter::RamLak).unwrap());
    println!("fbp 500 angles: {:?}", t.elapsed());

    let g50 = ScanGeometry::standard(50, size);
    let t = Instant::now();
    let y = forward(&phantom, &g50).unwrap();
    println!("forward 50 angles: {:?}", t.elapsed());
    let t = Instant::now();
    let _ = nltg_core::radon::adjoint(&y);
    println!("adjoint 50 angles: {:?}", t.elapsed());

    let t = Instant::now();
    let graph = build_weights(
        &u_ref,
        &PatchKernel { patch_radius: 2, a: 1.5, h: 5.0 },
        5,
        10,
        4,
    )
    .unwrap();
    println!(
        "build_weights r=5 k=10+4: {:?} (edges {}, max degree {})",
        t.elapsed(),
        graph.n_edges(),
        graph.max_degree()
    );

    let mut delta = PriorCovariance::default_delta_c(&graph);
    let cov = loop {
        let t = Instant::now();
        match PriorCovariance::build(u_ref.as_slice(), 5.0, &graph, delta) {
            Ok(c) => {
                println!(
                    "covariance build ok at delta_c {delta}: {:?} bw {} dominant {}",
                    t.elapsed(),
                    c.bandwidth(),
                    c.is_diagonally_dominant()
                );
                break c;
            }
            Err(e) => {
                println!("covariance build failed at delta_c {delta} ({:?}): {e}", t.elapsed());
                delta *= 2.0;
            }
        }
    };

    let v: Vec<f64> = (0..size * size).map(|i| (i as f64 * 0.01).sin()).collect();
    let t = Instant::now();
    for _ in 0..10 {
        let _ = cov.apply_precision(&v).unwrap();
    }
    println!("apply_precision x10: {:?}", t.elapsed());
    let t = Instant::now();
    for s in 0..10 {
        let _ = cov.sample(s);
    }
    println!("sample x10: {:?}", t.elapsed());
    let t = Instant::now();
    for _ in 0..10 {
        let _ = nl_laplacian(&v, &graph).unwrap();
    }
    println!("nl_laplacian x10: {:?}", t.elapsed());
    let t = Instant::now();
    for _ in 0..10 {
        let _ = nl_gradient(&v, &graph).unwrap();
    }
    println!("nl_gradient x10: {:?}", t.elapsed());
    let t = Instant::now();
    for _ in 0..10 {
        let img = nltg_core::Image::from_data(size, size, v.clone()).unwrap();
        let _ = forward(&img, &g50).unwrap();
    }
    println!("forward x10 (with image copy): {:?}", t.elapsed());
}
