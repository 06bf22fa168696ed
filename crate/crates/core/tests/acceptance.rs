//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its own PASS/FAIL line; exits non-zero if any fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use btprox::adaptation::LqSmoother;
use btprox::channel::{ber_from_snr, ChannelConfig};
use btprox::harness::{
    connected_sweep_runs, figure, rtt_points, run_scenario, simulate_stream, Scenario, StreamRun, Trajectory,
};
use btprox::inquiry::{build_timeline, HopKind, InquiryConfig};
use btprox::linkmgr::{settle_power_control, BerWindow, LinkManagerConfig};
use btprox::power::{power_mw, scenario_energy_j, PowerModel};
use btprox::time::SimTime;
use btprox::transport::{
    effective_throughput, saturating_schedule, AclLink, AclPacket, AttemptOutcome, PacketType, TransportConfig,
    MAX_EFFECTIVE_BPS,
};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn inquiry_timing() -> Outcome {
    let cfg = InquiryConfig::default();
    let t = build_timeline(&cfg).map_err(|e| e.to_string())?;
    check(t.duration == SimTime::from_micros(10_240_000), format!("duration {}", t.duration))?;
    check(t.events.len() == 32_768, format!("{} hops", t.events.len()))?;
    let spacing = SimTime::from_nanos(312_500);
    check(
        t.events.windows(2).all(|w| w[1].time - w[0].time == spacing),
        "hop spacing is not 312.5 us everywhere",
    )?;
    check(t.events[0].time == SimTime::ZERO, "first hop not at t = 0")?;
    check(t.events.last().unwrap().time + spacing == t.duration, "last hop does not close the procedure")?;
    let (tx, rx) = (t.count(HopKind::Tx), t.count(HopKind::Listen));
    check(tx == 16_384 && rx == 16_384, format!("tx {tx} listen {rx}"))?;
    Ok(format!("{} hops ({tx} TX + {rx} LISTEN) at 312.5 us over {}", t.events.len(), t.duration))
}

fn throughput_cap() -> Outcome {
    let cfg = TransportConfig::default();
    let duration = SimTime::from_millis(10_000);
    let quantum = AclPacket::full(PacketType::Dh5).payload_bits() as f64 / duration.as_secs_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let clean = saturating_schedule(PacketType::Dh5, duration, 0.0, &cfg, &mut rng);
    let bps = effective_throughput(&clean.records, duration).map_err(|e| e.to_string())?;
    check(
        (bps - MAX_EFFECTIVE_BPS).abs() <= quantum,
        format!("error-free throughput {bps:.1} bps, quantum {quantum:.1}"),
    )?;
    let mut worst: f64 = 0.0;
    for ber in [0.0, 1e-7, 1e-6, 1e-5, 1e-4, 3e-4, 1e-3] {
        for kind in PacketType::ALL {
            let s = saturating_schedule(kind, duration, ber, &cfg, &mut rng);
            let mut bits = 0u64;
            for r in s.records.iter().filter(|r| r.delivered) {
                bits += r.payload_bits;
                let running = bits as f64 / r.end.as_secs_f64();
                worst = worst.max(running);
                check(
                    bits as f64 <= MAX_EFFECTIVE_BPS * r.end.as_secs_f64() + 1e-6,
                    format!("{kind:?} at ber {ber}: {running:.0} bps at {}", r.end),
                )?;
            }
        }
    }
    Ok(format!("error-free {bps:.1} bps (quantum {quantum:.1}); max running rate over all schedules {worst:.1}"))
}

fn feedback_defeats_rssi() -> Outcome {
    let fig4 = figure("fig4").unwrap();
    let grpr = fig4.link.grpr().map_err(|e| e.to_string())?;
    // Required TX lies in [min_tx, max_tx] while path loss <= max_tx - GRPR lower bound.
    let reach = fig4.channel.distance_for_loss(fig4.link.max_tx_dbm - grpr.lower_dbm());
    let trace = run_scenario(&fig4).map_err(|e| e.to_string())?;
    let mut in_range = 0;
    for row in trace.rows.iter().filter(|r| r.distance_m <= reach) {
        in_range += 1;
        check(row.rssi == Some(0), format!("rssi {:?} at {:.2} m with power control", row.rssi, row.distance_m))?;
    }
    let bound = ((fig4.link.max_tx_dbm - fig4.link.min_tx_dbm) / fig4.link.power_step_db).ceil() as usize;
    for &d in fig4.sweep.distances_m.iter().filter(|d| **d <= reach) {
        let settled = settle_power_control(d, &fig4.channel, &grpr, fig4.link.initial_power_state(true), 1000)
            .map_err(|e| e.to_string())?;
        check(settled.rssi.value() == 0, format!("closed loop settles at rssi {} at {d} m", settled.rssi))?;
        check(settled.iterations <= bound, format!("{} steps at {d} m", settled.iterations))?;
    }
    let mut open = fig4.clone();
    open.toggles.power_control = false;
    let open_trace = run_scenario(&open).map_err(|e| e.to_string())?;
    let rssi: Vec<i8> = open_trace.rows.iter().map(|r| r.rssi.unwrap_or(i8::MIN)).collect();
    check(rssi.windows(2).all(|w| w[1] <= w[0]), format!("open-loop RSSI not monotone: {rssi:?}"))?;
    check(rssi.first() > rssi.last(), "open-loop RSSI never drops")?;
    Ok(format!(
        "closed loop: RSSI 0 at all {in_range} distances <= {reach:.2} m; open loop: RSSI {} -> {} over {:.1}..{:.1} m",
        rssi[0],
        rssi[rssi.len() - 1],
        open.sweep.distances_m[0],
        open.sweep.distances_m[open.sweep.distances_m.len() - 1]
    ))
}

fn lq_usability() -> Outcome {
    let fig7 = figure("fig7").unwrap();
    let runs = connected_sweep_runs(&fig7).map_err(|e| e.to_string())?;
    let lq: Vec<u8> = runs
        .iter()
        .map(|r| r.samples.last().and_then(|s| s.lq).map_or(0, |q| q.value()))
        .collect();
    check(lq.windows(2).all(|w| w[1] <= w[0]), format!("LQ not monotone: {lq:?}"))?;
    let drop = lq[0] as i32 - lq[lq.len() - 1] as i32;
    check(drop > 0, "no LQ drop across the sweep")?;
    let far = runs.last().unwrap();
    check(
        far.samples.iter().any(|s| s.delivery_ratio() == Some(0.0)),
        "delivery ratio never reaches 0 at the far end",
    )?;
    let first_dead = fig7
        .sweep
        .distances_m
        .iter()
        .zip(&runs)
        .find(|(_, r)| r.link_loss.is_some())
        .map(|(d, _)| *d);
    Ok(format!(
        "LQ {} -> {} (drop {drop}) over {} distances; link lost from {:.1} m on, delivery ratio 0",
        lq[0],
        lq[lq.len() - 1],
        lq.len(),
        first_dead.unwrap_or(f64::NAN)
    ))
}

fn rtt_confounds() -> Outcome {
    let fig5 = figure("fig5").unwrap();
    let pts = rtt_points(&fig5).map_err(|e| e.to_string())?;
    let means: Vec<f64> = pts.iter().map(|p| p.mean_ms.unwrap_or(f64::NAN)).collect();
    check(
        means.windows(2).all(|w| w[1] > w[0]),
        format!("RTT means not strictly increasing: {means:.3?}"),
    )?;
    // Hold distance at the middle of the grid and switch one factor at a time.
    let mid = fig5.sweep.distances_m[fig5.sweep.distances_m.len() / 2];
    let at = |s: &Scenario| -> Result<(f64, f64), String> {
        let mut s = s.clone();
        s.sweep.distances_m = vec![mid];
        let p = rtt_points(&s).map_err(|e| e.to_string())?[0];
        Ok((p.mean_ms.ok_or("all probes timed out")?, p.std_err_ms.unwrap_or(0.0)))
    };
    let (base, base_se) = at(&fig5)?;
    let mut fec = fig5.clone();
    fec.toggles.fec = true;
    let (with_fec, fec_se) = at(&fec)?;
    let mut loaded = fig5.clone();
    loaded.toggles.piconet_load = 0.3;
    let (with_load, load_se) = at(&loaded)?;
    let fec_margin = 3.0 * (base_se.powi(2) + fec_se.powi(2)).sqrt();
    let load_margin = 3.0 * (base_se.powi(2) + load_se.powi(2)).sqrt();
    check(with_fec - base > fec_margin, format!("FEC {with_fec:.3} vs {base:.3} ms, 3 SE {fec_margin:.3}"))?;
    check(with_load - base > load_margin, format!("load {with_load:.3} vs {base:.3} ms, 3 SE {load_margin:.3}"))?;
    Ok(format!(
        "mean RTT {:.2} -> {:.2} ms over {} points; at {:.2} m: base {base:.2}, FEC {with_fec:.2} (+{:.2} > {fec_margin:.2}), load 0.3 {with_load:.2} (+{:.2} > {load_margin:.2})",
        means[0],
        means[means.len() - 1],
        means.len(),
        mid,
        with_fec - base,
        with_load - base
    ))
}

fn walk(points: Vec<[f64; 2]>, secs: u64, initial_rung: Option<usize>, seed: u64) -> Result<StreamRun, String> {
    let mut s = figure("adaptive-walk").unwrap();
    s.stream.initial_rung = initial_rung;
    s.trajectory = points;
    simulate_stream(&s, &s.trajectory(), SimTime::from_millis(secs * 1000), seed).map_err(|e| e.to_string())
}

fn decisions_step_by_one(run: &StreamRun, start: usize) -> bool {
    let mut last = start;
    run.decisions.iter().all(|d| {
        let ok = d.decision.rung.abs_diff(last) <= 1;
        last = d.decision.rung;
        ok
    })
}

fn monotone_response() -> Outcome {
    let away = walk(vec![[0.0, 1.0], [2.0, 1.0], [12.0, 11.0]], 12, None, 3)?;
    let rungs = away.rung_sequence();
    check(rungs.windows(2).all(|w| w[1] <= w[0]), format!("walk-away rungs rose: {rungs:?}"))?;
    check(rungs.first() > rungs.last(), "walk-away never stepped down")?;
    check(decisions_step_by_one(&away, 5), "walk-away skipped a rung")?;

    let toward = walk(vec![[0.0, 9.5], [8.5, 1.0]], 15, Some(0), 3)?;
    check(toward.link_loss.is_none(), "walk-toward lost the link")?;
    let up = toward.rung_sequence();
    check(up.windows(2).all(|w| w[1] >= w[0]), format!("walk-toward rungs fell: {up:?}"))?;
    check(up.last() > up.first(), "walk-toward never stepped up")?;
    check(decisions_step_by_one(&toward, 0), "walk-toward skipped a rung")?;
    Ok(format!(
        "walk-away rungs {} -> {} ({} changes), walk-toward {} -> {} ({} changes), one rung per decision",
        rungs[0],
        rungs[rungs.len() - 1],
        away.reconfigurations().len(),
        up[0],
        up[up.len() - 1],
        toward.reconfigurations().len()
    ))
}

/// Distance at which the noiseless LQ sits at `lq` with full TX power.
fn distance_for_lq(lq: f64, link: &LinkManagerConfig, ch: &ChannelConfig) -> f64 {
    let ber = link.lq_mapping().unwrap().ber_for_lq(lq);
    // Invert 0.5 exp(-snr/2) for snr, then back out the path loss.
    let snr_db = 10.0 * (2.0 * (0.5 / ber).ln()).log10();
    debug_assert!((ber_from_snr(snr_db) - ber).abs() < 1e-12);
    let loss = link.max_tx_dbm - (ch.noise_floor_dbm + snr_db);
    ch.distance_for_loss(loss)
}

fn hysteresis_stability() -> Outcome {
    let mut s = figure("adaptive-walk").unwrap();
    let b = 2;
    let (up, down) = (s.controller.up_thresholds[b], s.controller.down_thresholds[b]);
    let gap = up - down;
    let d = distance_for_lq((up + down) / 2.0, &s.link, &s.channel);
    s.channel.shadowing_sigma_db = 0.2;
    s.trajectory = vec![[0.0, d]];
    let run = simulate_stream(&s, &Trajectory::stationary(d), SimTime::from_millis(600_000), 5).map_err(|e| e.to_string())?;
    check(run.link_loss.is_none(), "stationary link dropped")?;
    let settle = SimTime::from_millis(10_000);
    let smoothed: Vec<f64> = run.samples.iter().filter(|r| r.time >= settle).filter_map(|r| r.smoothed_lq).collect();
    let lo = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(hi - lo < gap, format!("smoothed LQ spread {:.1} is not below the gap {gap}", hi - lo))?;
    let total = run.reconfigurations().len();
    let after = run.reconfigurations().iter().filter(|r| r.time >= settle).count();
    check(after <= 2, format!("{after} rung changes after settling"))?;
    Ok(format!(
        "at {d:.2} m, smoothed LQ in [{lo:.1}, {hi:.1}] (spread {:.1} < gap {gap}); {after} changes in 10 min after settling ({total} including the initial descent)",
        hi - lo
    ))
}

fn energy(s: &Scenario, model: &PowerModel) -> Result<f64, String> {
    let trace = run_scenario(s).map_err(|e| e.to_string())?;
    scenario_energy_j(&trace.bitrate_series(), model).map_err(|e| e.to_string())
}

fn energy_saving() -> Outcome {
    let walk = figure("adaptive-walk").unwrap();
    let results: Vec<Result<(f64, f64), String>> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let adaptive = Scenario { seed, ..walk.clone() };
            let mut fixed = adaptive.clone();
            fixed.toggles.adaptation = false;
            Ok((energy(&adaptive, &walk.power)?, energy(&fixed, &walk.power)?))
        })
        .collect();
    let mut saved = Vec::new();
    for (seed, r) in results.into_iter().enumerate() {
        let (a, f) = r?;
        check(a < f, format!("seed {seed}: adaptive {a:.3} J vs fixed {f:.3} J"))?;
        saved.push(1.0 - a / f);
    }
    let table = run_scenario(&figure("fig8").unwrap()).map_err(|e| e.to_string())?;
    let p: Vec<f64> = table.rows.iter().map(|r| r.power_mw.unwrap()).collect();
    check(p.windows(2).all(|w| w[1] > w[0]), format!("power not increasing with bitrate: {p:?}"))?;
    check(
        (power_mw(320_000.0, &walk.power) - p[p.len() - 1]).abs() < 1e-9,
        "fig8 table disagrees with the power model",
    )?;
    let min = saved.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = saved.iter().cloned().fold(0.0, f64::max);
    Ok(format!(
        "adaptive saves {:.1}%..{:.1}% energy in 20/20 seeds; power {:.1} -> {:.1} mW across the ladder",
        100.0 * min,
        100.0 * max,
        p[0],
        p[p.len() - 1]
    ))
}

fn warning_precedes_loss() -> Outcome {
    let s = Scenario {
        trajectory: vec![[0.0, 1.0], [20.0, 21.0]],
        duration_s: 20.0,
        ..figure("adaptive-walk").unwrap()
    };
    let res: Vec<(Option<SimTime>, Option<SimTime>)> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let r = simulate_stream(&s, &s.trajectory(), s.duration(), seed).expect("valid scenario");
            (r.first_warning, r.link_loss)
        })
        .collect();
    let lost = res.iter().filter(|(_, l)| l.is_some()).count();
    let ahead: Vec<f64> = res
        .iter()
        .filter_map(|(w, l)| match (w, l) {
            (Some(w), Some(l)) if w < l => Some((*l - *w).as_secs_f64()),
            _ => None,
        })
        .collect();
    check(lost == 100, format!("only {lost}/100 walks lost the link"))?;
    check(ahead.len() >= 95, format!("warning first in {}/100 seeds", ahead.len()))?;
    let min = ahead.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean = ahead.iter().sum::<f64>() / ahead.len() as f64;
    Ok(format!(
        "warning before loss in {}/100 seeds (lead min {min:.2} s, mean {mean:.2} s) at warn_lq {}",
        ahead.len(),
        s.controller.warn_lq
    ))
}

fn determinism() -> Outcome {
    let mut noisy = figure("adaptive-walk").unwrap();
    noisy.channel.shadowing_sigma_db = 2.0;
    noisy.seed = 42;
    noisy.name = "adaptive-walk-shadowed".into();
    let mut checked = Vec::new();
    for s in [figure("adaptive-walk").unwrap(), noisy, figure("fig6").unwrap()] {
        let a = run_scenario(&s).map_err(|e| e.to_string())?.to_csv();
        let b = run_scenario(&s).map_err(|e| e.to_string())?.to_csv();
        check(a.as_bytes() == b.as_bytes(), format!("{} differs between runs", s.name))?;
        checked.push(format!("{} ({} bytes)", s.name, a.len()));
    }
    Ok(format!("byte-identical CSV: {}", checked.join(", ")))
}

fn oracle_equivalences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for stream in 0..5 {
        let mut w = BerWindow::new(100);
        let mut hist: Vec<f64> = Vec::new();
        let mut sm = LqSmoother::new(25);
        let mut lqs: Vec<u8> = Vec::new();
        for step in 0..1000 {
            let ber = 10f64.powf(rng.random_range(-8.0..-0.302));
            hist.push(ber);
            let got = w.update(ber);
            let tail = &hist[hist.len().saturating_sub(100)..];
            let want = tail.iter().sum::<f64>() / tail.len() as f64;
            check(
                (got - want).abs() <= 1e-12 * want,
                format!("stream {stream} step {step}: window {got} vs {want}"),
            )?;
            let lq: u8 = rng.random();
            lqs.push(lq);
            let got = sm.push(lq);
            let tail = &lqs[lqs.len().saturating_sub(25)..];
            let want = tail.iter().map(|&v| v as f64).sum::<f64>() / tail.len() as f64;
            check(got == want, format!("stream {stream} step {step}: smoothed {got} vs {want}"))?;
        }
    }
    let ber: f64 = 1e-4;
    let pkt = AclPacket::full(PacketType::Dh5);
    let expected = (1.0 - ber).powi(2744);
    let mut link = AclLink::new(u32::MAX, 0.0);
    let trials = 100_000;
    let mut delivered = 0;
    for _ in 0..trials {
        if link.attempt(&pkt, ber, &mut rng).map_err(|e| e.to_string())? == AttemptOutcome::Delivered {
            delivered += 1;
        }
    }
    let rate = delivered as f64 / trials as f64;
    check((rate - expected).abs() <= 0.01, format!("delivery {rate} vs {expected}"))?;
    Ok(format!(
        "window/smoother exact on 5x1000 steps; DH5 delivery at 1e-4: {rate:.4} vs (1-1e-4)^2744 = {expected:.4}"
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

fn main() {
    let criteria = [
        Criterion { id: 1, name: "inquiry timing", limit: Duration::from_secs(1), run: inquiry_timing },
        Criterion { id: 2, name: "throughput cap", limit: Duration::from_secs(5), run: throughput_cap },
        Criterion { id: 3, name: "feedback defeats RSSI", limit: Duration::from_secs(5), run: feedback_defeats_rssi },
        Criterion { id: 4, name: "LQ usability", limit: Duration::from_secs(5), run: lq_usability },
        Criterion { id: 5, name: "RTT confounds", limit: Duration::from_secs(30), run: rtt_confounds },
        Criterion { id: 6, name: "monotone response", limit: Duration::from_secs(5), run: monotone_response },
        Criterion { id: 7, name: "hysteresis stability", limit: Duration::from_secs(5), run: hysteresis_stability },
        Criterion { id: 8, name: "energy saving", limit: Duration::from_secs(30), run: energy_saving },
        Criterion { id: 9, name: "warning precedes loss", limit: Duration::from_secs(60), run: warning_precedes_loss },
        Criterion { id: 10, name: "determinism", limit: Duration::from_secs(10), run: determinism },
        Criterion { id: 11, name: "oracle equivalences", limit: Duration::from_secs(30), run: oracle_equivalences },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > c.limit => Err(format!("{detail}; took {took:.2?} > {:?}", c.limit)),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {} ({took:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {} ({took:.2?}): {why}", c.id, c.name);
            }
        }
    }
    println!("acceptance: {}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
