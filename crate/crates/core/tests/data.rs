use tpgf_core::data::{
    gen_moving_sprites, gen_multinode_series, load_csv, read_frames, sprite_sequences, windowize, write_csv,
    write_frames, MultinodeConfig, SpriteConfig,
};
use tpgf_core::SeqTensor;

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// Mean Pearson correlation over all node pairs, per channel, averaged.
fn mean_inter_node_correlation(s: &SeqTensor) -> f64 {
    let (len, nodes, channels) = (s.shape()[0], s.shape()[1], s.shape()[2]);
    let series =
        |n: usize, f: usize| -> Vec<f64> { (0..len).map(|t| s.data()[(t * nodes + n) * channels + f]).collect() };
    let mut total = 0.0;
    let mut count = 0;
    for f in 0..channels {
        for a in 0..nodes {
            for b in a + 1..nodes {
                total += pearson(&series(a, f), &series(b, f));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn coupling_raises_inter_node_correlation() {
    for seed in [1, 2, 3] {
        let cfg = |coupling| MultinodeConfig {
            nodes: 6,
            channels: 3,
            length: 600,
            coupling,
            noise: 0.2,
            seed,
        };
        let low = mean_inter_node_correlation(&gen_multinode_series(&cfg(0.0)).unwrap());
        let high = mean_inter_node_correlation(&gen_multinode_series(&cfg(0.9)).unwrap());
        assert!(high > low, "seed {seed}: {high} !> {low}");
    }
}

#[test]
fn csv_round_trip_through_windowing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let s = gen_multinode_series(&MultinodeConfig {
        nodes: 3,
        channels: 4,
        length: 50,
        coupling: 0.3,
        noise: 0.1,
        seed: 9,
    })
    .unwrap();
    write_csv(&s, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back, s);
    let d = windowize(&back, 10, 5, 3, &[1, 3]).unwrap();
    assert_eq!(d.samples[0].target.shape(), &[5, 3, 2]);
    assert_eq!(d.samples[1].start, 3);
}

#[test]
fn frames_stay_in_unit_range_and_round_trip() {
    let cfg = SpriteConfig {
        height: 16,
        width: 16,
        sprites: 3,
        sprite_size: 5,
        speed_min: 0,
        speed_max: 3,
        length: 30,
        seed: 4,
    };
    let seqs = sprite_sequences(&cfg, 4, None).unwrap();
    for s in &seqs {
        assert_eq!(s.shape(), &[30, 256, 1]);
        assert!(s.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
    assert_ne!(seqs[0], seqs[1]);
    assert_eq!(
        gen_moving_sprites(&cfg, None).unwrap(),
        gen_moving_sprites(&cfg, None).unwrap()
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.frames");
    write_frames(&seqs, (16, 16), &path).unwrap();
    let (back, grid) = read_frames(&path).unwrap();
    assert_eq!(grid, (16, 16));
    assert_eq!(back, seqs);
}
