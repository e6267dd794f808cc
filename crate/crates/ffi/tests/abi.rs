use dwols_privacy::distributed::{aggregate_summaries, compute_site_summary, solve_distributed};
use dwols_privacy::simgen::{generate_replicate, ScenarioConfig};
use dwols_privacy_ffi::*;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

const BINARY_CONFIG: &str = r#"
[design]
treatment_free_basis = ["x"]
blip_covariate_basis = ["x"]
[treatment]
kind = "binary"
covariate_basis = ["x"]
"#;

const CONTINUOUS_CONFIG: &str = r#"
[design]
treatment_free_basis = ["x"]
blip_covariate_basis = ["x"]
[treatment]
kind = "continuous"
covariate_basis = ["x"]
intercept = false
"#;

fn site_csvs(dir: &Path, scenario: &str) -> Vec<PathBuf> {
    let cfg = ScenarioConfig::by_id(scenario)
        .unwrap()
        .with_n(900)
        .with_seed(7);
    let data = generate_replicate(&cfg, 0).unwrap().dataset;
    data.split_by_site()
        .into_iter()
        .map(|(site, d)| {
            let path = dir.join(format!("site{site}.csv"));
            d.write_csv(std::fs::File::create(&path).unwrap(), &[])
                .unwrap();
            path
        })
        .collect()
}

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = dwols_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn config(text: &str) -> *mut DwolsConfig {
    let mut cfg = ptr::null_mut();
    assert_eq!(
        dwols_config_from_toml(c(text).as_ptr(), &mut cfg),
        DwolsStatus::Ok
    );
    cfg
}

unsafe fn summary_of(path: &Path, cfg: *const DwolsConfig) -> *mut DwolsSiteSummary {
    let mut d = ptr::null_mut();
    assert_eq!(
        dwols_dataset_from_csv_path(c(path.to_str().unwrap()).as_ptr(), &mut d),
        DwolsStatus::Ok
    );
    let mut s = ptr::null_mut();
    assert_eq!(dwols_site_summary_compute(d, cfg, &mut s), DwolsStatus::Ok);
    dwols_dataset_free(d);
    s
}

unsafe fn psi_of(est: *const DwolsEstimate) -> Vec<f64> {
    let mut len = 0;
    assert_eq!(
        dwols_estimate_psi(est, ptr::null_mut(), 0, &mut len),
        DwolsStatus::Ok
    );
    let mut buf = vec![0.0; len];
    assert_eq!(
        dwols_estimate_psi(est, buf.as_mut_ptr(), len, &mut len),
        DwolsStatus::Ok
    );
    buf
}

#[test]
fn distributed_fit_through_json_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let files = site_csvs(dir.path(), "a");
    unsafe {
        let cfg = config(BINARY_CONFIG);
        let agg = dwols_aggregator_new();
        // Add in reverse to exercise order independence.
        for f in files.iter().rev() {
            let s = summary_of(f, cfg);
            let mut json = ptr::null_mut();
            assert_eq!(dwols_site_summary_to_json(s, &mut json), DwolsStatus::Ok);
            let mut back = ptr::null_mut();
            assert_eq!(
                dwols_site_summary_from_json(json, &mut back),
                DwolsStatus::Ok
            );
            assert_eq!(dwols_aggregator_add(agg, back), DwolsStatus::Ok);
            dwols_string_free(json);
            dwols_site_summary_free(back);
            dwols_site_summary_free(s);
        }
        let mut est = ptr::null_mut();
        assert_eq!(
            dwols_aggregator_solve(agg, ptr::null(), &mut est),
            DwolsStatus::Ok
        );
        let psi = psi_of(est);

        let lib_cfg = dwols_privacy::config::AnalysisConfig::from_toml(BINARY_CONFIG).unwrap();
        let summaries: Vec<_> = files
            .iter()
            .map(|f| {
                let d = dwols_privacy::data::Dataset::read_csv(std::fs::File::open(f).unwrap())
                    .unwrap();
                compute_site_summary(&d, &lib_cfg.design, &lib_cfg.treatment, None).unwrap()
            })
            .collect();
        let expected =
            solve_distributed(&aggregate_summaries(&summaries).unwrap(), &lib_cfg.design).unwrap();
        assert_eq!(psi, expected.psi);

        let mut json = ptr::null_mut();
        assert_eq!(dwols_estimate_to_json(est, &mut json), DwolsStatus::Ok);
        let text = CStr::from_ptr(json).to_str().unwrap();
        assert!(text.contains("\"method\":\"distributed\""));
        dwols_string_free(json);
        dwols_estimate_free(est);
        dwols_aggregator_free(agg);
        dwols_config_free(cfg);
    }
}

#[test]
fn mismatched_designs_are_a_protocol_error() {
    let dir = tempfile::tempdir().unwrap();
    let files = site_csvs(dir.path(), "f");
    unsafe {
        let binary = config(BINARY_CONFIG);
        let continuous = config(CONTINUOUS_CONFIG);
        let a = summary_of(&files[0], continuous);
        let mut other_cfg = ptr::null_mut();
        let quadratic = BINARY_CONFIG.replace(
            "[treatment]",
            "blip_order = \"quadratic_in_a\"\n[treatment]",
        );
        assert_eq!(
            dwols_config_from_toml(
                c(&quadratic.replace("binary", "continuous")).as_ptr(),
                &mut other_cfg
            ),
            DwolsStatus::Ok
        );
        let b = summary_of(&files[1], other_cfg);
        let agg = dwols_aggregator_new();
        assert_eq!(dwols_aggregator_add(agg, a), DwolsStatus::Ok);
        assert_eq!(dwols_aggregator_add(agg, b), DwolsStatus::Ok);
        let mut est = ptr::null_mut();
        assert_eq!(
            dwols_aggregator_solve(agg, ptr::null(), &mut est),
            DwolsStatus::Protocol
        );
        assert!(est.is_null());
        assert!(last_error().contains("fingerprint"), "{}", last_error());
        for p in [a, b] {
            dwols_site_summary_free(p);
        }
        dwols_aggregator_free(agg);
        for p in [binary, continuous, other_cfg] {
            dwols_config_free(p);
        }
    }
}

#[test]
fn tampered_summary_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let files = site_csvs(dir.path(), "a");
    unsafe {
        let cfg = config(BINARY_CONFIG);
        let s = summary_of(&files[0], cfg);
        let mut json = ptr::null_mut();
        assert_eq!(dwols_site_summary_to_json(s, &mut json), DwolsStatus::Ok);
        let text = CStr::from_ptr(json)
            .to_str()
            .unwrap()
            .replace("\"binary\"", "\"continuous\"");
        let mut back = ptr::null_mut();
        assert_eq!(
            dwols_site_summary_from_json(c(&text).as_ptr(), &mut back),
            DwolsStatus::Protocol
        );
        assert!(back.is_null());
        let mut back = ptr::null_mut();
        assert_eq!(
            dwols_site_summary_from_json(c("{").as_ptr(), &mut back),
            DwolsStatus::Protocol
        );
        dwols_string_free(json);
        dwols_site_summary_free(s);
        dwols_config_free(cfg);
    }
}

#[test]
fn null_and_bad_inputs() {
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(
            dwols_dataset_from_csv_path(ptr::null(), &mut d),
            DwolsStatus::NullPointer
        );
        assert!(last_error().contains("path"));
        assert_eq!(
            dwols_dataset_from_csv_str(c("site,x,a,y\n1,1,1\n").as_ptr(), &mut d),
            DwolsStatus::Config
        );
        let bad = [0xffu8, 0];
        assert_eq!(
            dwols_dataset_from_csv_str(bad.as_ptr().cast(), &mut d),
            DwolsStatus::InvalidUtf8
        );
        let mut cfg = ptr::null_mut();
        assert_eq!(
            dwols_config_from_toml(c("[design]").as_ptr(), &mut cfg),
            DwolsStatus::Config
        );
        assert!(cfg.is_null());
        let mut len = 0;
        assert_eq!(
            dwols_dataset_len(ptr::null(), &mut len),
            DwolsStatus::NullPointer
        );
        // Freeing null is a no-op.
        dwols_dataset_free(ptr::null_mut());
        dwols_estimate_free(ptr::null_mut());
        dwols_string_free(ptr::null_mut());
    }
}

#[test]
fn gold_fit_psi_buffer_and_binary_rule() {
    let cfg_lib = ScenarioConfig::by_id("a")
        .unwrap()
        .with_n(1200)
        .with_seed(3);
    let mut text = Vec::new();
    generate_replicate(&cfg_lib, 0)
        .unwrap()
        .dataset
        .write_csv(&mut text, &[])
        .unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        let csv = c(std::str::from_utf8(&text).unwrap());
        assert_eq!(
            dwols_dataset_from_csv_str(csv.as_ptr(), &mut d),
            DwolsStatus::Ok
        );
        let mut n = 0;
        assert_eq!(dwols_dataset_len(d, &mut n), DwolsStatus::Ok);
        assert_eq!(n, 1200);
        let cfg = config(BINARY_CONFIG);
        let mut est = ptr::null_mut();
        assert_eq!(dwols_estimate_gold(d, cfg, &mut est), DwolsStatus::Ok);
        let psi = psi_of(est);
        assert_eq!(psi.len(), 2);

        let mut one = [0.0];
        let mut len = 0;
        assert_eq!(
            dwols_estimate_psi(est, one.as_mut_ptr(), 1, &mut len),
            DwolsStatus::BufferTooSmall
        );
        assert_eq!(len, 2);

        let names = [c("x")];
        let name_ptrs: Vec<_> = names.iter().map(|n| n.as_ptr()).collect();
        let x = [12.0];
        let (mut dose, mut kind) = (f64::NAN, DwolsDoseKind::Interior);
        assert_eq!(
            dwols_optimal_dose(
                est,
                name_ptrs.as_ptr(),
                x.as_ptr(),
                1,
                0.0,
                1.0,
                &mut dose,
                &mut kind
            ),
            DwolsStatus::Ok
        );
        assert_eq!(kind, DwolsDoseKind::Binary);
        assert_eq!(dose, f64::from(u8::from(psi[0] + psi[1] * 12.0 > 0.0)));

        let missing = [c("z")];
        let missing_ptrs: Vec<_> = missing.iter().map(|n| n.as_ptr()).collect();
        assert_eq!(
            dwols_optimal_dose(
                est,
                missing_ptrs.as_ptr(),
                x.as_ptr(),
                1,
                0.0,
                1.0,
                &mut dose,
                &mut kind
            ),
            DwolsStatus::Config
        );
        dwols_estimate_free(est);
        dwols_config_free(cfg);
        dwols_dataset_free(d);
    }
}

#[test]
fn quadratic_dose_through_abi() {
    let app = dwols_privacy::simgen::ApplicationConfig::synthetic_default();
    let data = dwols_privacy::simgen::generate_application_style(Some(&app), 11, 0).unwrap();
    let mut text = Vec::new();
    data.write_csv(&mut text, &[]).unwrap();
    let toml = include_str!("../../core/configs/application_quadratic.toml");
    unsafe {
        let mut d = ptr::null_mut();
        let csv = c(std::str::from_utf8(&text).unwrap());
        assert_eq!(
            dwols_dataset_from_csv_str(csv.as_ptr(), &mut d),
            DwolsStatus::Ok
        );
        let cfg = config(toml);
        let mut est = ptr::null_mut();
        assert_eq!(dwols_estimate_gold(d, cfg, &mut est), DwolsStatus::Ok);

        let names: Vec<CString> = data.covariate_names().iter().map(|n| c(n)).collect();
        let ptrs: Vec<_> = names.iter().map(|n| n.as_ptr()).collect();
        let x = &data.records()[0].covariates;
        let (mut dose, mut kind) = (f64::NAN, DwolsDoseKind::Binary);
        assert_eq!(
            dwols_optimal_dose(
                est,
                ptrs.as_ptr(),
                x.as_ptr(),
                x.len(),
                0.0,
                100.0,
                &mut dose,
                &mut kind
            ),
            DwolsStatus::Ok
        );
        assert!((0.0..=100.0).contains(&dose));
        assert_ne!(kind, DwolsDoseKind::Binary);
        assert_eq!(
            dwols_optimal_dose(
                est,
                ptrs.as_ptr(),
                x.as_ptr(),
                x.len(),
                5.0,
                5.0,
                &mut dose,
                &mut kind
            ),
            DwolsStatus::Config
        );
        dwols_estimate_free(est);
        dwols_config_free(cfg);
        dwols_dataset_free(d);
    }
}

#[test]
fn header_declares_the_api() {
    let header = include_str!("../include/dwols_privacy.h");
    for f in [
        "dwols_last_error_message",
        "dwols_site_summary_compute",
        "dwols_site_summary_from_json",
        "dwols_aggregator_solve",
        "dwols_optimal_dose",
        "DWOLS_STATUS_PROTOCOL",
    ] {
        assert!(header.contains(f), "{f} missing from header");
    }
}

/// Compiles the C example against the header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libdwols_privacy_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let files = site_csvs(dir.path(), "a");
    let bin = dir.path().join("smoke");
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let status = Command::new(cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&bin)
        .arg(&files[0])
        .arg(&files[1])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with("2 "), "{line}");
}

fn which_cc() -> Result<&'static str, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| {
            Command::new(c)
                .arg("--version")
                .output()
                .is_ok_and(|o| o.status.success())
        })
        .ok_or(())
}
