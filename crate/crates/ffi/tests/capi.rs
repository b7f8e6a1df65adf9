use std::ffi::{CStr, CString};
use std::ptr;

use deep_eprop::linalg::OpCounter;
use deep_eprop::network::{init_params, parse_spec, Network};
use deep_eprop::trainer::{episode_gradient, Algorithm};
use deep_eprop_ffi::*;

const SPEC: &str = r#"{
  "topology": "chain",
  "input_dim": 2,
  "readout_dim": 1,
  "layers": [
    {"hidden_dim": 3, "activation": "tanh"},
    {"hidden_dim": 4, "activation": "tanh"}
  ],
  "loss_timesteps": "every_step",
  "tracked_groups": ["all"],
  "seed": 7
}"#;

const STEPS: usize = 5;

fn inputs() -> Vec<f64> {
    (0..STEPS * 2).map(|i| ((i as f64) * 0.7).sin()).collect()
}

fn targets() -> Vec<f64> {
    (0..STEPS).map(|i| ((i as f64) * 0.3).cos()).collect()
}

fn last_error() -> String {
    let p = de_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    net: *mut DeNetwork,
    params: *mut DeParams,
}

impl Handles {
    fn new(spec: &str) -> Self {
        let json = CString::new(spec).unwrap();
        let mut net = ptr::null_mut();
        assert_eq!(
            unsafe { de_network_from_spec_json(json.as_ptr(), &mut net) },
            DeStatus::Ok
        );
        let mut params = ptr::null_mut();
        let seed = unsafe { de_network_spec_seed(net) };
        assert_eq!(unsafe { de_params_init(net, seed, &mut params) }, DeStatus::Ok);
        Handles { net, params }
    }

    fn gradient(&self, alg: &str, mode: Option<&str>) -> (DeStatus, Vec<f64>, f64) {
        let alg = CString::new(alg).unwrap();
        let mode = mode.map(|m| CString::new(m).unwrap());
        let n = unsafe { de_network_param_count(self.net) };
        let mut grad = vec![f64::NAN; n];
        let mut loss = f64::NAN;
        let (xs, ys) = (inputs(), targets());
        let status = unsafe {
            de_gradient(
                self.net,
                self.params,
                alg.as_ptr(),
                mode.as_ref().map_or(ptr::null(), |m| m.as_ptr()),
                xs.as_ptr(),
                STEPS,
                ys.as_ptr(),
                STEPS,
                grad.as_mut_ptr(),
                grad.len(),
                &mut loss,
            )
        };
        (status, grad, loss)
    }
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            de_params_free(self.params);
            de_network_free(self.net);
        }
    }
}

#[test]
fn dimensions_match_the_spec() {
    let h = Handles::new(SPEC);
    unsafe {
        assert_eq!(de_network_input_dim(h.net), 2);
        assert_eq!(de_network_readout_dim(h.net), 1);
        // input 3x2, recurrent 3x3 + 4x4, edge 4x3, biases 3 + 4, readout 1x4
        assert_eq!(de_network_param_count(h.net), 6 + 9 + 16 + 12 + 3 + 4 + 4);
        assert_eq!(de_network_spec_seed(h.net), 7);
    }
}

#[test]
fn gradient_matches_the_core_engine() {
    let h = Handles::new(SPEC);
    let net = Network::build(&parse_spec(SPEC).unwrap()).unwrap();
    let params = init_params(&net, 7);
    let xs: Vec<Vec<f64>> = inputs().chunks(2).map(<[f64]>::to_vec).collect();
    let ys: Vec<Vec<f64>> = targets().chunks(1).map(<[f64]>::to_vec).collect();
    for alg in [Algorithm::Bptt, Algorithm::DeepRtrl, Algorithm::DeepEprop] {
        let (status, grad, loss) = h.gradient(alg.as_str(), None);
        assert_eq!(status, DeStatus::Ok, "{alg}: {}", last_error_or_none());
        let want = episode_gradient(
            alg,
            net.trace_mode,
            &net,
            &params,
            &xs,
            &ys,
            &mut OpCounter::new(),
        )
        .unwrap();
        let mut at = 0;
        for info in net.groups() {
            let got = &grad[at..at + info.len()];
            match want.get(&info.id) {
                Some(m) => assert_eq!(got, m.as_slice(), "{alg} {}", info.id),
                None => assert!(got.iter().all(|&v| v == 0.0)),
            }
            at += info.len();
        }
        assert_eq!(loss, net.loss(&params, &xs, &ys).unwrap());
    }
}

fn last_error_or_none() -> String {
    let p = de_last_error_message();
    if p.is_null() {
        "no error".into()
    } else {
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }
}

#[test]
fn deep_rtrl_and_bptt_agree_through_the_abi() {
    let h = Handles::new(SPEC);
    let (_, a, _) = h.gradient("deep_rtrl", None);
    let (_, b, _) = h.gradient("bptt", None);
    let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    assert!(diff / norm <= 1e-9);
}

#[test]
fn single_layer_engines_refuse_deep_networks() {
    let h = Handles::new(SPEC);
    for alg in ["rtrl", "eprop"] {
        let (status, _, _) = h.gradient(alg, None);
        assert_eq!(status, DeStatus::Argument);
        assert!(last_error().contains("single-layer"));
    }
}

#[test]
fn params_round_trip_and_write_changes_the_gradient() {
    let h = Handles::new(SPEC);
    let n = unsafe { de_network_param_count(h.net) };
    let mut buf = vec![0.0; n];
    assert_eq!(
        unsafe { de_params_read(h.params, buf.as_mut_ptr(), n) },
        DeStatus::Ok
    );
    let (_, before, _) = h.gradient("bptt", None);

    assert_eq!(
        unsafe { de_params_write(h.net, h.params, buf.as_ptr(), n) },
        DeStatus::Ok
    );
    let (_, same, _) = h.gradient("bptt", None);
    assert_eq!(before, same);

    let scaled: Vec<f64> = buf.iter().map(|v| v * 0.5).collect();
    assert_eq!(
        unsafe { de_params_write(h.net, h.params, scaled.as_ptr(), n) },
        DeStatus::Ok
    );
    let mut back = vec![0.0; n];
    unsafe { de_params_read(h.params, back.as_mut_ptr(), n) };
    assert_eq!(back, scaled);
    let (_, after, _) = h.gradient("bptt", None);
    assert_ne!(before, after);
}

#[test]
fn bad_json_reports_a_parse_error() {
    let json = CString::new("{ not json").unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { de_network_from_spec_json(json.as_ptr(), &mut net) },
        DeStatus::Parse
    );
    assert!(net.is_null());
    assert!(last_error().contains("line 1"));
}

#[test]
fn cyclic_graph_reports_a_validation_error() {
    let text =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/specs/cycle.json")).unwrap();
    let json = CString::new(text).unwrap();
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { de_network_from_spec_json(json.as_ptr(), &mut net) },
        DeStatus::Validation
    );
    assert!(last_error().contains("cycle"));
}

#[test]
fn null_and_size_errors_are_reported() {
    let h = Handles::new(SPEC);
    let mut net = ptr::null_mut();
    assert_eq!(
        unsafe { de_network_from_spec_json(ptr::null(), &mut net) },
        DeStatus::NullPointer
    );
    let mut short = vec![0.0; 3];
    assert_eq!(
        unsafe { de_params_read(h.params, short.as_mut_ptr(), 3) },
        DeStatus::BufferSize
    );
    assert!(last_error().contains("expected"));
    assert_eq!(
        unsafe { de_params_read(ptr::null(), short.as_mut_ptr(), 3) },
        DeStatus::NullPointer
    );
}

#[test]
fn unknown_algorithm_and_bad_trace_mode_are_argument_errors() {
    let h = Handles::new(SPEC);
    let (status, _, _) = h.gradient("sgd", None);
    assert_ne!(status, DeStatus::Ok);
    assert!(last_error().contains("sgd"));
    // widths 3 and 4 cannot share diagonal traces everywhere
    let (status, _, _) = h.gradient("deep_eprop", Some("diag_everywhere"));
    assert_eq!(status, DeStatus::Validation);
    let (status, _, _) = h.gradient("deep_eprop", Some("diag_home_dense_above"));
    assert_eq!(status, DeStatus::Ok);
}

#[test]
fn mismatched_episode_shape_is_rejected() {
    let h = Handles::new(SPEC);
    let alg = CString::new("bptt").unwrap();
    let n = unsafe { de_network_param_count(h.net) };
    let mut grad = vec![0.0; n];
    let (xs, ys) = (inputs(), targets());
    let status = unsafe {
        de_gradient(
            h.net,
            h.params,
            alg.as_ptr(),
            ptr::null(),
            xs.as_ptr(),
            STEPS,
            ys.as_ptr(),
            2,
            grad.as_mut_ptr(),
            n,
            ptr::null_mut(),
        )
    };
    assert_eq!(status, DeStatus::Argument);
}

#[test]
fn success_clears_the_last_error() {
    let h = Handles::new(SPEC);
    h.gradient("nope", None);
    assert!(!de_last_error_message().is_null());
    h.gradient("bptt", None);
    assert!(de_last_error_message().is_null());
}

#[test]
fn header_declares_every_export() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/deep_eprop.h")).unwrap();
    for sym in [
        "de_last_error_message",
        "de_network_from_spec_json",
        "de_network_free",
        "de_network_input_dim",
        "de_network_readout_dim",
        "de_network_param_count",
        "de_network_spec_seed",
        "de_params_init",
        "de_params_free",
        "de_params_read",
        "de_params_write",
        "de_gradient",
        "typedef struct DeNetwork DeNetwork",
        "DE_STATUS_BUFFER_SIZE = 8",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

#[test]
fn c_example_compiles_against_the_header() {
    let dir = env!("CARGO_MANIFEST_DIR");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(format!("{dir}/include"))
        .arg(format!("{dir}/examples/gradient.c"))
        .status()
    else {
        eprintln!("no C compiler on PATH; skipped");
        return;
    };
    assert!(status.success());
}
