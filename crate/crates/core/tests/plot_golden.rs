//! SVG output is compared byte for byte against committed files.
//! Set `MGS_UPDATE_GOLDEN=1` to rewrite them after an intended change.

use std::fs;
use std::path::PathBuf;

use mgs_core::plot::{histogram_svg, plot_reports, proportions_svg};

fn golden(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("MGS_UPDATE_GOLDEN").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {}", path.display()));
    assert!(expected == actual, "{name} differs from its golden copy");
}

#[test]
fn histogram_matches_golden() {
    let svg = histogram_svg("Neighbour counts at 1.0 x eps", &[("unguided", vec![40, 25, 12, 6, 2]), ("guided", vec![30, 30, 15, 8])]);
    golden("histogram.svg", &svg);
}

#[test]
fn proportions_match_golden() {
    let svg = proportions_svg("Mode proportions", &[("training", vec![0.61, 0.39]), ("unguided", vec![0.7, 0.3]), ("guided", vec![0.55, 0.45])]);
    golden("proportions.svg", &svg);
}

#[test]
fn empty_histogram_matches_golden() {
    golden("histogram_empty.svg", &histogram_svg("Neighbour counts", &[]));
}

#[test]
fn reports_rendered_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = dir.path().join("metrics");
    fs::create_dir_all(&metrics).unwrap();
    fs::write(metrics.join("histogram.csv"), "set,multiplier,k,count\nunguided,1.0,0,3\nunguided,1.0,2,1\nguided,1.0,1,4\n").unwrap();
    fs::write(metrics.join("proportions.csv"), "set,mode,proportion\ntraining,0,0.6\ntraining,1,0.4\n").unwrap();
    let written = plot_reports(&metrics, &dir.path().join("plots")).unwrap();
    let names: Vec<String> = written.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, ["histogram_c1.0.svg", "proportions.svg"]);
    golden("report_histogram.svg", &fs::read_to_string(&written[0]).unwrap());
}
