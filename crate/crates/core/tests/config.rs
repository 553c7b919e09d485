use nanotrap::config::*;
use nanotrap::reference;
use serde_json::json;

fn table1_text() -> &'static str {
    PRESETS.iter().find(|(n, _)| *n == "table1").unwrap().1
}

fn close(a: f64, b: f64) -> bool {
    a == b || ((a - b) / b).abs() < 1e-12
}

fn close3(a: &[f64; 3], b: &[f64; 3]) -> bool {
    a.iter().zip(b).all(|(x, y)| close(*x, *y))
}

#[test]
fn all_presets_parse() {
    for (name, _) in PRESETS {
        let c = preset(name).unwrap();
        assert!(!c.scenarios.is_empty(), "{name}");
        assert_eq!(c.digest.len(), 64);
    }
    assert!(preset("table1.toml").is_ok());
    assert!(matches!(preset("nope"), Err(ConfigError::UnknownPreset(_))));
}

#[test]
fn table1_preset_matches_reference_values() {
    let c = preset("table1").unwrap();
    let t = reference::trap();
    assert!(close3(&c.trap.electrode_distance, &t.electrode_distance));
    assert_eq!((c.trap.u_dc, c.trap.u_slow, c.trap.u_fast), (t.u_dc, t.u_slow, t.u_fast));
    assert!(close(c.trap.omega_slow, t.omega_slow) && close(c.trap.omega_fast, t.omega_fast));
    assert!(close(c.nanoparticle.mass, reference::nanoparticle().mass));
    assert!(close(c.nanoparticle.charge, reference::nanoparticle().charge));
    assert!(close(c.ion.mass, reference::ion().mass));
    assert!(close(c.dissipation.pressure, 7e-9));
    assert!(close(c.dissipation.gas_damping_override.unwrap(), reference::quoted_gas_damping()));
}

#[test]
fn round_trip_preserves_values() {
    for (name, _) in PRESETS {
        let a = preset(name).unwrap();
        let b = parse_config(&a.to_toml_string()).unwrap();
        assert!(close3(&a.trap.u_dc, &b.trap.u_dc), "{name}");
        assert!(close3(&a.trap.u_slow, &b.trap.u_slow));
        assert!(close3(&a.trap.u_fast, &b.trap.u_fast));
        assert!(close3(&a.trap.electrode_distance, &b.trap.electrode_distance));
        assert!(close3(&a.trap.geometric_factor, &b.trap.geometric_factor));
        assert!(close(a.trap.omega_slow, b.trap.omega_slow));
        assert!(close(a.trap.omega_fast, b.trap.omega_fast));
        for (p, q) in [(&a.nanoparticle, &b.nanoparticle), (&a.ion, &b.ion)] {
            assert!(close(p.mass, q.mass) && close(p.charge, q.charge));
            assert!(close(p.radius, q.radius) && close(p.permittivity, q.permittivity));
        }
        let (d, e) = (&a.dissipation, &b.dissipation);
        for (x, y) in [
            (d.temperature, e.temperature),
            (d.pressure, e.pressure),
            (d.feedback_damping, e.feedback_damping),
            (d.doppler_damping, e.doppler_damping),
            (d.doppler_heating_power, e.doppler_heating_power),
            (d.trap_heating_power, e.trap_heating_power),
            (d.probe_wavelength, e.probe_wavelength),
            (d.feedback_constant, e.feedback_constant),
            (d.zeta, e.zeta),
        ] {
            assert!(close(x, y), "{name}: {x} vs {y}");
        }
        assert_eq!(d.gas_damping_override.is_some(), e.gas_damping_override.is_some());
        assert_eq!(a.n_ions, b.n_ions);
        assert_eq!(a.seed, b.seed);
        assert_eq!(a.secular_method, b.secular_method);
        assert_eq!(a.scenarios.len(), b.scenarios.len());
        for (s, t) in a.scenarios.iter().zip(&b.scenarios) {
            assert_eq!((&s.name, s.task, &s.output), (&t.name, t.task, &t.output));
            assert_eq!((s.restarts, s.axis_restricted, s.floquet_check, s.traces), (t.restarts, t.axis_restricted, t.floquet_check, t.traces));
            assert_eq!(s.sweep.is_some(), t.sweep.is_some());
            if let (Some(u), Some(v)) = (&s.sweep, &t.sweep) {
                assert_eq!((&u.parameter, u.scale, u.points), (&v.parameter, v.scale, v.points));
                assert!(close(u.start, v.start) && close(u.stop, v.stop));
            }
            assert_eq!(s.overrides.len(), t.overrides.len());
            for ((k, x), (l, y)) in s.overrides.iter().zip(&t.overrides) {
                assert!(k == l && close(*x, *y));
            }
        }
    }
}

#[test]
fn digest_ignores_key_order_and_format() {
    let a = parse_document("[trap]\nomega_slow = \"7 kHz\"\nomega_fast = \"17.5 MHz\"\n[ion]\nmass = 1.0\n").unwrap();
    let b = parse_document("[ion]\nmass = 1.0\n[trap]\nomega_fast = \"17.5 MHz\"\nomega_slow = \"7 kHz\"\n").unwrap();
    let c = parse_document(r#"{"trap": {"omega_fast": "17.5 MHz", "omega_slow": "7 kHz"}, "ion": {"mass": 1.0}}"#).unwrap();
    assert_eq!(digest(&a), digest(&b));
    assert_eq!(digest(&a), digest(&c));
    let d = parse_document("[ion]\nmass = 2.0\n[trap]\nomega_fast = \"17.5 MHz\"\nomega_slow = \"7 kHz\"\n").unwrap();
    assert_ne!(digest(&a), digest(&d));
}

#[test]
fn units_are_converted_to_si() {
    let p = |v: serde_json::Value, d| parse_quantity(&v, d, "k").unwrap();
    assert!(close(p(json!("7e-11 mbar"), Dimension::Pressure), 7e-9));
    assert!(close(p(json!("1 Torr"), Dimension::Pressure), 101_325.0 / 760.0));
    assert!(close(p(json!("7 kHz"), Dimension::Frequency), 2.0 * std::f64::consts::PI * 7e3));
    assert!(close(p(json!("44.5 nHz"), Dimension::Frequency), reference::quoted_gas_damping()));
    assert!(close(p(json!("134 nm"), Dimension::Length), 134e-9));
    assert!(close(p(json!("750 e"), Dimension::Charge), 750.0 * 1.602_176_634e-19));
    assert!(close(p(json!(3.5), Dimension::Voltage), 3.5));
    assert!(matches!(
        parse_quantity(&json!("7 kHz"), Dimension::Pressure, "k"),
        Err(ConfigError::Unit(_))
    ));
    assert!(parse_quantity(&json!("seven Pa"), Dimension::Pressure, "k").is_err());
}

#[test]
fn schema_errors_are_reported() {
    let text = table1_text();
    let unknown = text.replacen("[trap]", "[trap]\nvoltage = 3", 1);
    assert!(matches!(parse_config(&unknown), Err(ConfigError::Schema(_))));
    let missing = text.replacen("omega_slow = \"7 kHz\"\n", "", 1);
    assert!(matches!(parse_config(&missing), Err(ConfigError::Schema(_))));
    let bad_task = text.replacen("task = \"frequencies\"", "task = \"dance\"", 1);
    assert!(matches!(parse_config(&bad_task), Err(ConfigError::Schema(_))));
    let escape = text.replacen("name = \"frequencies\"", "name = \"frequencies\"\noutput = \"../x.csv\"", 1);
    assert!(matches!(parse_config(&escape), Err(ConfigError::Schema(_))));
}

#[test]
fn parse_errors_carry_positions() {
    match parse_config("n_ions = 1\n[trap\n") {
        Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    assert!(matches!(parse_config("{\"n_ions\": }"), Err(ConfigError::Parse { .. })));
}

#[test]
fn empty_scenario_list_is_valid() {
    let text = table1_text();
    let cut = text.find("[[scenario]]").unwrap();
    let c = parse_config(&text[..cut]).unwrap();
    assert!(c.scenarios.is_empty());
}

#[test]
fn sweep_values() {
    let lin = Sweep {
        parameter: "n_ions".into(),
        scale: Scale::Linear,
        start: 1.0,
        stop: 12.0,
        points: 12,
    };
    assert_eq!(lin.values(), (1..=12).map(f64::from).collect::<Vec<_>>());
    let log = Sweep {
        scale: Scale::Log,
        start: 1e-8,
        stop: 1e3,
        points: 12,
        ..lin.clone()
    };
    let v = log.values();
    assert!(close(v[0], 1e-8) && close(v[11], 1e3) && close(v[1], 1e-7));
    let single = Sweep { points: 1, ..lin };
    assert_eq!(single.values(), vec![1.0]);
}

#[test]
fn sweep_bounds_are_validated() {
    let base = table1_text();
    let reversed = format!(
        "{base}\n[[scenario]]\nname = \"r\"\ntask = \"frequencies\"\nsweep = {{ parameter = \"n_ions\", start = 3, stop = 1, points = 2 }}\n"
    );
    assert!(parse_config(&reversed).is_err());
    let log_zero = format!(
        "{base}\n[[scenario]]\nname = \"r\"\ntask = \"frequencies\"\nsweep = {{ parameter = \"particle_damping\", scale = \"log\", start = 0, stop = 1, points = 2 }}\n"
    );
    assert!(parse_config(&log_zero).is_err());
}

#[test]
fn particle_damping_parameter() {
    let mut c = preset("table1").unwrap();
    let gas = c.dissipation.gas_damping_override.unwrap();
    c.set_parameter("particle_damping", 10.0).unwrap();
    assert!(close(c.dissipation.feedback_damping, 10.0 - gas));
    assert_eq!(c.dissipation.gas_damping_override, Some(gas));
    c.set_parameter("particle_damping", 0.5 * gas).unwrap();
    assert_eq!(c.dissipation.feedback_damping, 0.0);
    assert_eq!(c.dissipation.gas_damping_override, Some(0.5 * gas));
}

#[test]
fn named_parameters() {
    let mut c = preset("table1").unwrap();
    c.set_parameter("trap.u_dc.y", 1.5).unwrap();
    assert_eq!(c.trap.u_dc[1], 1.5);
    c.set_parameter("n_ions", 4.0).unwrap();
    assert_eq!(c.n_ions, 4);
    assert!(c.set_parameter("n_ions", 2.5).is_err());
    assert!(c.set_parameter("trap.colour", 1.0).is_err());
    for (name, _) in PARAMETERS {
        assert!(parameter_dimension(name).is_some());
    }
}
