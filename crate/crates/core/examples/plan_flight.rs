//! Lays out parallel and criss-cross flight plans and the pulse schedule
//! they imply.
//!
//! ```sh
//! cargo run --release --example plan_flight -- [extent_m] [spacing_m]
//! ```

use sylva::geom::Rect;
use sylva::survey::{generate_pulses, plan_flight, FlightPattern, ScannerConfig};

fn main() -> sylva::Result<()> {
    let mut args = std::env::args().skip(1);
    let size: f64 = args.next().map_or(250.0, |s| s.parse().expect("extent"));
    let spacing: f64 = args.next().map_or(20.0, |s| s.parse().expect("spacing"));
    let extent = Rect::from_size(size, size);
    let scanner = ScannerConfig::default();

    for pattern in [FlightPattern::Parallel, FlightPattern::CrissCross] {
        let plan = plan_flight(&extent, spacing, 60.0, 5.0, pattern)?;
        let schedule = generate_pulses(&plan, &scanner)?;
        println!(
            "{pattern:?}: {} legs, {:.0} m, {:.0} s, {} scan lines, {} pulses",
            plan.legs.len(),
            plan.total_length(),
            plan.duration(),
            schedule.line_count(),
            schedule.pulse_count()
        );
    }

    let plan = plan_flight(&extent, spacing, 60.0, 5.0, FlightPattern::CrissCross)?;
    println!("\nswath at 60 m: {:.1} m", scanner.swath_width(60.0));
    for (i, leg) in plan.legs.iter().enumerate().take(4) {
        println!(
            "leg {i}: ({:.0}, {:.0}) -> ({:.0}, {:.0}) from t = {:.0} s",
            leg.start[0], leg.start[1], leg.end[0], leg.end[1], leg.start_time
        );
    }
    Ok(())
}
