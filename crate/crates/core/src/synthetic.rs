//! Synthetic two-class accelerometer data for tests and demos.
//!
//! Class 0 is a slow gait-like sinusoid (0.5 to 1.5 Hz) plus noise. Class 1
//! adds bursts of 3 to 6 Hz oscillation, the band where freezing tremor
//! lives. AccV is the cleanest channel, AccAP is noisier and AccML the
//! noisiest.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use fog_nn::seed::{fnv1a, rng_for};

use crate::channel::{Channel, PerChannel};
use crate::ingest::{EventTracks, RawRecording};
use crate::windowing::{SplitTag, Window, WindowSet, WINDOW_LEN};

/// Sample rate of generated windows.
pub const WINDOW_RATE_HZ: f64 = 64.0;

/// Noise standard deviation per channel, relative to a unit gait wave.
pub fn noise_level(c: Channel) -> f64 {
    match c {
        Channel::AccV => 0.15,
        Channel::AccAP => 0.3,
        Channel::AccML => 0.45,
    }
}

fn gait_wave<R: Rng>(rng: &mut R, len: usize, rate: f64) -> Vec<f64> {
    let f = rng.gen_range(0.5..1.5);
    let a = rng.gen_range(0.8..1.2);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let offset = rng.gen_range(-2.0..2.0);
    (0..len)
        .map(|t| offset + a * (std::f64::consts::TAU * f * t as f64 / rate + phase).sin())
        .collect()
}

fn add_burst<R: Rng>(rng: &mut R, x: &mut [f64], from: usize, to: usize, rate: f64) {
    let f = rng.gen_range(3.0..6.0);
    let a = rng.gen_range(0.6..1.0);
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    for (t, v) in x.iter_mut().enumerate().take(to).skip(from) {
        *v += a * (std::f64::consts::TAU * f * t as f64 / rate + phase).sin();
    }
}

fn add_noise<R: Rng>(rng: &mut R, x: &mut [f64], sigma: f64) {
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    x.iter_mut().for_each(|v| *v += normal.sample(rng));
}

/// One 64 Hz window of the given class.
pub fn synthetic_window<R: Rng>(rng: &mut R, label: u8) -> PerChannel<Vec<f64>> {
    let bursts: Vec<(usize, usize)> = if label == 1 {
        let n = rng.gen_range(1..=3);
        (0..n)
            .map(|_| {
                let len = rng.gen_range(64..=128);
                let start = rng.gen_range(0..=WINDOW_LEN - len);
                (start, start + len)
            })
            .collect()
    } else {
        Vec::new()
    };
    PerChannel::from_fn(|c| {
        let mut x = gait_wave(rng, WINDOW_LEN, WINDOW_RATE_HZ);
        for &(a, b) in &bursts {
            add_burst(rng, &mut x, a, b, WINDOW_RATE_HZ);
        }
        add_noise(rng, &mut x, noise_level(c));
        x
    })
}

/// `n` windows, a fraction `fog_share` of them class 1, spread over
/// `subjects` subjects. Window `k` of a subject starts at `k * 256`, so the
/// windows of a subject form a contiguous evaluation grid.
pub fn synthetic_window_set(
    n: usize,
    fog_share: f64,
    subjects: usize,
    seed: u64,
    split: SplitTag,
) -> WindowSet {
    let mut rng = rng_for(seed, "synthetic", &[split as u64]);
    let subjects = subjects.max(1);
    let windows = (0..n)
        .map(|i| {
            let label = u8::from(rng.gen_bool(fog_share));
            Window {
                subject_id: format!("syn{:02}", i % subjects),
                start_index: (i / subjects) * WINDOW_LEN,
                data: synthetic_window(&mut rng, label),
                label,
                fog_fraction: f64::from(label),
                channel_mask: PerChannel([true; 3]),
            }
        })
        .collect();
    WindowSet::new(split, windows).expect("keys are unique by construction")
}

/// A 128 Hz recording alternating walking and freezing segments, in the
/// raw input format. FOG segments are annotated on one of the three event
/// tracks.
pub fn synthetic_recording(subject_id: &str, seconds: usize, seed: u64) -> RawRecording {
    let rate = 128.0;
    let len = seconds * 128;
    let mut rng = rng_for(seed, "recording", &[fnv1a(subject_id.as_bytes())]);
    let mut label = vec![0u8; len];
    let mut t = rng.gen_range(256..1024).min(len);
    while t < len {
        let run = rng.gen_range(640..1536);
        let end = (t + run).min(len);
        label[t..end].iter_mut().for_each(|l| *l = 1);
        t = end + rng.gen_range(1024..2048);
    }
    let mut channels = PerChannel::from_fn(|c| {
        let mut x = gait_wave(&mut rng, len, rate);
        add_noise(&mut rng, &mut x, noise_level(c));
        x
    });
    let mut s = 0;
    while s < len {
        if label[s] == 1 {
            let e = (s..len).find(|&i| label[i] == 0).unwrap_or(len);
            for c in Channel::ALL {
                add_burst(&mut rng, &mut channels[c], s, e, rate);
            }
            s = e;
        } else {
            s += 1;
        }
    }
    let track = rng.gen_range(0..3);
    let mut events = EventTracks::default();
    for (k, v) in [
        &mut events.start_hesitation,
        &mut events.turn,
        &mut events.walking,
    ]
    .into_iter()
    .enumerate()
    {
        *v = if k == track {
            label.clone()
        } else {
            vec![0; len]
        };
    }
    RawRecording {
        subject_id: subject_id.to_string(),
        sample_rate_hz: 128,
        time_index: (0..len as i64).collect(),
        channels,
        missing: PerChannel::from_fn(|_| vec![false; len]),
        events,
    }
}
