use serde_json::Value;
use signforge_web::{dtw_demo, lift_demo, plc_explore};

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn lift_demo_shapes() {
    let v = parse(&lift_demo(1, 10, 95.0, 0.0));
    assert_eq!(v["frames_2d"].as_array().unwrap().len(), 10);
    assert_eq!(v["frames_3d"].as_array().unwrap().len(), 10);
    assert_eq!(v["frames_3d"][0].as_array().unwrap().len(), 50);
    assert_eq!(v["bones"].as_array().unwrap().len(), 49);
    assert!(parse(&lift_demo(1, 10, 0.0, 0.0))["error"].is_string());
}

#[test]
fn plc_explore_counts_add_up() {
    let v = parse(&plc_explore("[0.1, 0.2, 0.7]", 1.0, 1000, 3));
    let p: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
    assert!((p[2] - 0.7).abs() < 1e-12);
    let c: Vec<usize> = serde_json::from_value(v["counts"].clone()).unwrap();
    assert_eq!(c.iter().sum::<usize>(), 1000);
    assert_eq!(plc_explore("[0.1, 0.2, 0.7]", 1.0, 1000, 3), plc_explore("[0.1, 0.2, 0.7]", 1.0, 1000, 3));
    assert!(parse(&plc_explore("[]", 1.0, 10, 0))["error"].is_string());
    assert!(parse(&plc_explore("[1]", -1.0, 10, 0))["error"].is_string());
}

#[test]
fn dtw_demo_self_alignment_is_diagonal() {
    let v = parse(&dtw_demo(0, 2, 2));
    assert_eq!(v["cost"], 0.0);
    let path: Vec<(usize, usize)> = serde_json::from_value(v["path"].clone()).unwrap();
    assert!(path.iter().all(|(i, j)| i == j));
    let v = parse(&dtw_demo(0, 1, 4));
    let local = v["local"].as_array().unwrap();
    let path: Vec<(usize, usize)> = serde_json::from_value(v["path"].clone()).unwrap();
    assert_eq!(path.last().unwrap(), &(local.len() - 1, local[0].as_array().unwrap().len() - 1));
}
