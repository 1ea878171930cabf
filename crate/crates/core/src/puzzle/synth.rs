//! Procedural stand-in for a photo corpus.
//!
//! Each image is a landscape-like scene: a bright sky over darker ground
//! split by a tilted soft horizon, side lighting, a few low-frequency color
//! waves and one band of oriented stripes. Adjacent pieces share smooth
//! structure across their borders, and the scene layout gives pieces the
//! kind of absolute-position cues (sky on top, lit side) real photos carry.

use std::f64::consts::TAU;

use super::Image;
use crate::rng::SeededRng;

struct Wave {
    freq: f64,
    dir: (f64, f64),
    phase: f64,
    amp: [f64; 3],
}

impl Wave {
    fn at(&self, u: f64, v: f64) -> f64 {
        (TAU * self.freq * (u * self.dir.0 + v * self.dir.1) + self.phase).cos()
    }
}

fn random_wave(rng: &mut SeededRng, freq: (f64, f64), amp: f64) -> Wave {
    let theta = rng.uniform(0.0, TAU);
    Wave {
        freq: rng.uniform(freq.0, freq.1),
        dir: (theta.cos(), theta.sin()),
        phase: rng.uniform(0.0, TAU),
        amp: [
            rng.uniform(-amp, amp),
            rng.uniform(-amp, amp),
            rng.uniform(-amp, amp),
        ],
    }
}

fn smoothstep(x: f64) -> f64 {
    let t = x.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Deterministic RGB scene of `side`x`side` pixels.
pub fn synth_image(seed: u64, side: usize) -> Image {
    let mut rng = SeededRng::new(seed);
    let sky = [
        rng.uniform(0.45, 0.7),
        rng.uniform(0.55, 0.8),
        rng.uniform(0.75, 0.95),
    ];
    let ground = [
        rng.uniform(0.15, 0.45),
        rng.uniform(0.2, 0.45),
        rng.uniform(0.05, 0.25),
    ];
    let horizon = rng.uniform(0.35, 0.65);
    let tilt = rng.uniform(-0.2, 0.2);
    let softness = rng.uniform(0.08, 0.2);
    let light = rng.uniform(0.15, 0.4);
    let waves: Vec<Wave> = (0..3)
        .map(|_| random_wave(&mut rng, (0.4, 1.6), 0.12))
        .collect();
    let bands = random_wave(&mut rng, (4.0, 9.0), 0.05);

    let mut data = Vec::with_capacity(side * side * 3);
    let scale = side.max(1) as f64;
    for y in 0..side {
        let v = (y as f64 + 0.5) / scale;
        for x in 0..side {
            let u = (x as f64 + 0.5) / scale;
            let edge = horizon + tilt * (u - 0.5);
            let t = smoothstep((v - edge) / softness + 0.5);
            let shade = 1.0 + light * (0.5 - u);
            let sky_shade = 1.1 - 0.3 * v;
            let waves_at: Vec<f64> = waves.iter().map(|w| w.at(u, v)).collect();
            let band = bands.at(u, v);
            for c in 0..3 {
                let base = sky[c] * sky_shade * (1.0 - t) + ground[c] * t;
                let mut value = base * shade + bands.amp[c] * band;
                for (w, s) in waves.iter().zip(&waves_at) {
                    value += w.amp[c] * s;
                }
                data.push(value.clamp(0.0, 1.0));
            }
        }
    }
    Image {
        height: side,
        width: side,
        channels: 3,
        data,
    }
}
