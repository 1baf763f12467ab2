use samlab_web::{accuracy_curves, train_mixture, weights_vs_eps};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn curves_peak_at_the_standard_weight() {
    let v = parse(&accuracy_curves(0.9, 0.1, 10, 0.05, 301));
    let w = v["w"].as_array().unwrap();
    let clean: Vec<f64> = v["clean"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    let best = (0..clean.len()).max_by(|&a, &b| clean[a].total_cmp(&clean[b])).unwrap();
    let step = w[1].as_f64().unwrap();
    assert!((w[best].as_f64().unwrap() - v["w_star"].as_f64().unwrap()).abs() <= step);
    assert!(v["w_at"].as_f64().unwrap() > v["w_star"].as_f64().unwrap());
}

#[test]
fn weights_grow_and_at_is_undefined_past_eta() {
    let v = parse(&weights_vs_eps(0.75, 0.1, 5, 0.15, 16));
    let at = v["wr_at"].as_array().unwrap();
    assert!(at[0].as_f64().is_some() && at[15].is_null());
    let sam: Vec<f64> = v["wr_sam"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert!(sam.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn invalid_input_reports_an_error() {
    assert!(parse(&weights_vs_eps(0.4, 0.1, 5, 0.1, 4))["error"].is_string());
    assert!(parse(&train_mixture("lion", 0.1, 0.2, 1, 0))["error"].is_string());
}

#[test]
fn trainer_returns_a_decision_map() {
    let a = train_mixture("sam", 0.1, 0.3, 5, 9);
    assert_eq!(a, train_mixture("sam", 0.1, 0.3, 5, 9));
    let v = parse(&a);
    let size = v["size"].as_u64().unwrap() as usize;
    let grid = v["grid"].as_array().unwrap();
    assert_eq!(grid.len(), size * size);
    assert!(grid.iter().all(|p| (0.0..=1.0).contains(&p.as_f64().unwrap())));
    assert!(v["clean_accuracy"].as_f64().unwrap() > 0.8);
    assert!(v["robust_accuracy"].as_f64().unwrap() <= v["clean_accuracy"].as_f64().unwrap());
}
