//! Desk-scale two-attractor experiment: train a small signal-switching NCA,
//! roll it out with periodic colour-switch signals, and report the topology
//! of its macroscopic state manifold.
//!
//!     cargo run --example two_attractor -p nca-scope-core

use ndarray::Array3;

use nca_scope_core::cloud::extract_macroscopic;
use nca_scope_core::engine::rollout;
use nca_scope_core::events::{Event, EventKind, EventScript};
use nca_scope_core::grid::{ChannelMode, GridState};
use nca_scope_core::homology::{
    betti_report, default_significance, maxmin_subsample, rips_persistence, DistanceMatrix,
};
use nca_scope_core::model::NcaModel;
use nca_scope_core::pca::{pca_fit, project_cloud};
use nca_scope_core::trainer::{train_with, SwitchSignal, TrainConfig, TrainTarget};

const H: usize = 16;
const W: usize = 16;
const CHANNELS: usize = 8;
const SIGNAL_CHANNEL: usize = 7;

fn uniform_target(rgb: [f32; 3]) -> Array3<f32> {
    let mut t = Array3::zeros((H, W, 3));
    for r in 0..H {
        for c in 0..W {
            for ch in 0..3 {
                t[(r, c, ch)] = rgb[ch];
            }
        }
    }
    t
}

fn alternating_signals(every: usize, steps: usize, magnitude: f64) -> EventScript {
    let mut events = Vec::new();
    let mut value = magnitude;
    let mut t = every;
    while t < steps {
        events.push(Event {
            timestep: t,
            kind: EventKind::Signal {
                centre: (H / 2, W / 2),
                jitter_radius: 2,
                channel: SIGNAL_CHANNEL,
                value,
                radius: 4.0,
            },
        });
        value = -value;
        t += every;
    }
    EventScript { events }
}

fn main() {
    let t0 = std::time::Instant::now();
    let mut model = NcaModel::<f32>::new_seeded(CHANNELS, 32, ChannelMode::RgbPlain, 42).unwrap();
    model.fire_rate = 1.0;

    let target = TrainTarget::Switching {
        targets: [
            uniform_target([0.10, 0.80, 0.20]),
            uniform_target([0.15, 0.25, 0.90]),
        ],
        signal: SwitchSignal {
            channel: SIGNAL_CHANNEL,
            radius: 4.0,
            magnitude: 1.0,
            switch_prob: 0.5,
        },
    };
    let initial = GridState::<f32>::seed(H, W, CHANNELS, ChannelMode::RgbPlain).unwrap();

    let mut config = TrainConfig::for_epochs(
        std::env::args()
            .nth(1)
            .and_then(|s| s.parse().ok())
            .unwrap_or(800),
    );
    config.steps_min = 16;
    config.steps_max = 32;
    config.rng_seed = 42;

    let (trained, log) = train_with(&model, &initial, &target, &config, |epoch, loss, _| {
        if (epoch + 1) % 50 == 0 {
            eprintln!("epoch {:>4}  loss {loss:.4}", epoch + 1);
        }
        Ok(())
    })
    .unwrap();
    println!(
        "trained {} epochs in {:.1}s, loss {:.4} -> {:.4}",
        log.len(),
        t0.elapsed().as_secs_f64(),
        log.losses().first().unwrap(),
        log.windowed_mean(20),
    );

    let steps = 2000;
    let events = alternating_signals(150, steps, 1.0);
    let traj = rollout(&trained, &initial, steps, &events, 7, 2).unwrap();
    let cloud = extract_macroscopic(&traj).unwrap();

    // Mean visible colour just before each signal shows the switching.
    for t in [70, 145, 220, 295, 370, 445, 980] {
        let c = cloud.colours()[t];
        println!(
            "step {:>4}: rgb ({:.2}, {:.2}, {:.2})",
            2 * t,
            c[0],
            c[1],
            c[2]
        );
    }

    let basis = pca_fit(&cloud, 2).unwrap();
    println!(
        "pca var: {:?}",
        basis.explained_variance.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    let embedded = project_cloud(&basis, &cloud).unwrap();

    let idx = maxmin_subsample(embedded.points(), 400, 11);
    let sub = embedded.select(&idx).unwrap();
    let dist = DistanceMatrix::from_points(sub.points()).unwrap();
    let diagram = rips_persistence(&dist, 1, dist.enclosing_radius()).unwrap();
    let threshold = default_significance(&diagram);
    let report = betti_report(&diagram, threshold);
    println!("significance threshold {threshold:.4}");
    let mut h1: Vec<_> = diagram
        .in_dim(1)
        .map(|iv| (iv.birth, iv.death, iv.persistence()))
        .collect();
    h1.sort_by(|a, b| b.2.total_cmp(&a.2));
    for (b, d, p) in h1.iter().take(6) {
        println!("H1 ({b:.3}, {d:.3}) persistence {p:.3}");
    }
    println!("betti: b0={} b1={} b2={}", report.h0, report.h1, report.h2);
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
