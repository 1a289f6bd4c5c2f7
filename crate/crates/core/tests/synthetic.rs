//! Generator statistics against its own rate oracle.

use demandgraph_core::demand::count_demand;
use demandgraph_core::geo::LocalProjection;
use demandgraph_core::synth::{generate_region, oracle_expected_demand, RateModel, SynthConfig};

#[test]
fn counting_recovers_the_generator_draws() {
    let cfg = SynthConfig { days: 3, ..SynthConfig::default() };
    for i in 0..cfg.n_regions() {
        let r = generate_region(&cfg, i).unwrap();
        let (tensor, report) = count_demand(&r.dataset, &r.grid, r.clock, r.slots).unwrap();
        assert_eq!(tensor, r.counts, "{}", r.dataset.region_id);
        assert_eq!(report.outside_window, 0);
        assert_eq!(report.counted as u64, r.counts.total());
    }
}

#[test]
fn same_seed_same_style_same_data() {
    let cfg = SynthConfig { days: 2, ..SynthConfig::default() };
    let a = generate_region(&cfg, 1).unwrap();
    let b = generate_region(&cfg, 1).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.counts, b.counts);
}

#[test]
fn zero_base_intensity_gives_no_trips() {
    let cfg = SynthConfig { days: 2, base_intensity: 0.0, ..SynthConfig::default() };
    let r = generate_region(&cfg, 0).unwrap();
    assert!(r.dataset.trips.is_empty());
    assert_eq!(r.counts.total(), 0);
}

/// The rate formula written out again from the config.
fn reimplemented_rate(cfg: &SynthConfig, region: usize, cell: usize, slot: usize) -> f64 {
    let style = &cfg.regions[region];
    let polygon = cfg.region_polygon(region).unwrap();
    let grid = RateModel::new(cfg, region).unwrap().grid().clone();
    let c = grid.cell(cell);
    if !polygon.contains(c.centroid) {
        return 0.0;
    }
    let (s, w, n, e) = polygon.bounds();
    let proj = LocalProjection::new(grid.origin());
    let mut spatial = cfg.background;
    for h in &style.hotspots {
        let p = proj.forward(demandgraph_core::geo::LatLon::new(s + h.rel_y * (n - s), w + h.rel_x * (e - w)));
        let d2 = (c.center.x - p.x).powi(2) + (c.center.y - p.y).powi(2);
        spatial += h.amplitude * (-d2 / (2.0 * h.radius_km * h.radius_km)).exp();
    }
    let spd = cfg.slots_per_day() as i64;
    let idx = (slot as i64 - i64::from(style.phase_shift_slots)).rem_euclid(spd) as usize;
    cfg.base_intensity * cfg.shared_daily_profile[idx] * spatial * style.intensity_scale
}

#[test]
fn oracle_matches_an_independent_rate_formula() {
    let cfg = SynthConfig::default();
    for region in 0..cfg.n_regions() {
        let model = RateModel::new(&cfg, region).unwrap();
        for (cell, slot) in [(0, 0), (10, 17), (30, 47), (model.grid().len() - 1, 100), (25, 333)] {
            let cell = cell.min(model.grid().len() - 1);
            let got = oracle_expected_demand(&cfg, region, cell, slot).unwrap();
            let want = reimplemented_rate(&cfg, region, cell, slot);
            assert!((got - want).abs() <= 1e-12 * want.max(1.0), "region {region} cell {cell} slot {slot}: {got} vs {want}");
        }
    }
}

#[test]
fn phase_shift_delays_the_rate() {
    let mut cfg = SynthConfig::default();
    cfg.regions[0].phase_shift_slots = 0;
    let unshifted = RateModel::new(&cfg, 0).unwrap();
    cfg.regions[0].phase_shift_slots = 5;
    let shifted = RateModel::new(&cfg, 0).unwrap();
    for k in 5..200 {
        assert_eq!(shifted.rate(12, k), unshifted.rate(12, k - 5));
    }
}

#[test]
fn flat_profile_without_hotspots_is_uniform() {
    let mut cfg = SynthConfig { background: 1.0, base_intensity: 2.5, ..SynthConfig::default() };
    cfg.shared_daily_profile = vec![1.0; 48];
    cfg.regions[0].hotspots.clear();
    cfg.regions[0].intensity_scale = 1.0;
    let model = RateModel::new(&cfg, 0).unwrap();
    for cell in (0..model.grid().len()).filter(|&c| model.is_active(c)) {
        assert_eq!(model.rate(cell, 7), 2.5);
    }
}

#[test]
fn per_cell_means_are_within_three_sigma() {
    // small disc so that 10^4 slots stay cheap
    let cfg = SynthConfig { grid_diameter_cells: 3, days: 209, ..SynthConfig::default() };
    let region = generate_region(&cfg, 0).unwrap();
    let model = RateModel::new(&cfg, 0).unwrap();
    let slots = region.slots;
    assert!(slots >= 10_000);
    let mut checked = 0;
    for cell in 0..region.grid.len() {
        let lambda: f64 = (0..slots).map(|k| model.rate(cell, k)).sum::<f64>() / slots as f64;
        if lambda == 0.0 {
            continue;
        }
        let mean = (0..slots).map(|k| f64::from(region.counts.get(cell, k))).sum::<f64>() / slots as f64;
        let sigma = (lambda / slots as f64).sqrt();
        assert!((mean - lambda).abs() < 3.0 * sigma, "cell {cell}: {mean} vs {lambda}");
        checked += 1;
    }
    assert!(checked >= 3);
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn regions_follow_the_shared_daily_profile() {
    let cfg = SynthConfig::default();
    let spd = cfg.slots_per_day();
    for i in 0..cfg.n_regions() {
        let r = generate_region(&cfg, i).unwrap();
        let phase = cfg.regions[i].phase_shift_slots as i64;
        let mut by_slot = vec![0.0; spd];
        for k in 0..r.slots {
            // undo the delay before folding onto the day
            let unshifted = (k as i64 - phase).rem_euclid(spd as i64) as usize;
            by_slot[unshifted] += r.counts.slot_column(k).iter().map(|&c| f64::from(c)).sum::<f64>();
        }
        let hourly: Vec<f64> = by_slot.chunks(2).map(|c| c.iter().sum()).collect();
        let profile: Vec<f64> = cfg.shared_daily_profile.chunks(2).map(|c| c.iter().sum()).collect();
        let rho = correlation(&hourly, &profile);
        assert!(rho >= 0.9, "{}: correlation {rho}", r.dataset.region_id);
    }
}
