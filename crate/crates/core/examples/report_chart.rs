use mmreid::evaluation::Summary;
use mmreid::report::{report_chart, report_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows: Vec<Summary> = [
        ("baseline_sum", "clean", 0.97, 0.88),
        ("baseline_sum", "ucd", 0.76, 0.41),
        ("mmsf", "clean", 0.99, 0.93),
        ("mmsf", "ucd", 0.80, 0.47),
    ]
    .iter()
    .map(|&(model, protocol, map, minp)| Summary { protocol: protocol.into(), model: model.into(), map, minp, rank1: map })
    .collect();
    print!("{}", report_csv(&rows));
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/report.png".into());
    report_chart(&rows).save(&out)?;
    println!("chart in {out}");
    Ok(())
}
