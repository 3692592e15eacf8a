//! Draws corruption plans under UCD, CCD and CCD-X and tallies how the two
//! modalities relate.

use mmreid::benchmark::{correlation, BenchmarkManifest, Correlation, ProtocolKind};

fn main() {
    let ids: Vec<String> = (0..5000).map(|k| format!("{:04}/{}", k / 10, k % 10)).collect();
    for protocol in [ProtocolKind::Ucd, ProtocolKind::Ccd, ProtocolKind::Ccdx(0.5)] {
        let m = BenchmarkManifest::build(protocol, 7, "example", &ids);
        let same_kind = m.plans.iter().filter(|p| p.v_kind().is_some() && p.v_kind() == p.i_kind()).count();
        let one_clean = m.plans.iter().filter(|p| p.visible.is_none() || p.infrared.is_none()).count();
        let weather = m
            .plans
            .iter()
            .filter(|p| p.v_kind().is_some_and(|k| correlation(k) == Correlation::Equal))
            .count();
        println!("{protocol:>8}: same kind {same_kind:5}  one side clean {one_clean:5}  equal-level weather on V {weather:5}");
    }

    let m = BenchmarkManifest::build(ProtocolKind::Ccd, 7, "example", &ids[..4]);
    print!("{}", m.serialize());
}
