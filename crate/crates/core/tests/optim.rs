use nalgebra::Vector2;
use previz_core::optim::*;

#[test]
fn first_step_moves_by_learning_rate() {
    let cfg = OptimConfig::default();
    let mut opt = AdamW::<2>::new(&cfg);
    let mut x = Vector2::new(1.0, -1.0);
    opt.step(&mut x, &Vector2::new(3.0, -0.01));
    assert!((x[0] - (1.0 - 5e-3)).abs() < 1e-9);
    assert!((x[1] - (-1.0 + 5e-3)).abs() < 1e-6);
}

#[test]
fn decoupled_decay_shrinks_without_gradient() {
    let cfg = OptimConfig { weight_decay: 0.1, ..OptimConfig::default() };
    let mut opt = AdamW::<2>::new(&cfg);
    let mut x = Vector2::new(2.0, 0.0);
    opt.step(&mut x, &Vector2::zeros());
    assert!((x[0] - 2.0 * (1.0 - 5e-4)).abs() < 1e-15);
}

#[test]
fn minimizes_quadratic() {
    let cfg = OptimConfig { learning_rate: 0.05, ..OptimConfig::default() };
    let mut opt = AdamW::<2>::new(&cfg);
    let mut x = Vector2::new(3.0, -2.0);
    for _ in 0..2000 {
        let g = Vector2::new(2.0 * (x[0] - 1.0), 8.0 * (x[1] + 0.5));
        opt.step(&mut x, &g);
    }
    assert!((x - Vector2::new(1.0, -0.5)).norm() < 1e-3);
}

#[test]
fn config_validation() {
    assert!(OptimConfig::default().validate().is_ok());
    assert_eq!(OptimConfig { steps: 0, ..Default::default() }.validate(), Err(ConfigError::Steps));
    assert!(OptimConfig { learning_rate: 0.0, ..Default::default() }.validate().is_err());
    assert!(OptimConfig { fd_epsilon: -1.0, ..Default::default() }.validate().is_err());
    let json = r#"{"gradient_mode":"finite-difference","steps":10}"#;
    let c: OptimConfig = serde_json::from_str(json).unwrap();
    assert_eq!(c.steps, 10);
    assert_eq!(c.learning_rate, 5e-3);
}
