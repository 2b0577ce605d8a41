use rcgrf::data::{load_csv, save_csv, synth_generate, SynthConfig};
use rcgrf::model_io::{load_model, save_model, SavedModel};
use rcgrf::{CellKind, CellParams, Error, Rng};

#[test]
fn dataset_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SynthConfig { missing_frac: 0.1, ..SynthConfig::default() };
    let data = synth_generate(&Rng::new(3), &cfg).unwrap();
    let path = dir.path().join("data.csv");
    save_csv(&data, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.samples.len(), 200);
    assert_eq!(back.samples, data.samples);
    let again = dir.path().join("again.csv");
    save_csv(&back, &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let model = SavedModel {
        params: CellParams::init(CellKind::Lstm, 2, 5, 3, &mut Rng::new(8)).unwrap(),
        normalization: None,
    };
    save_model(&model, &path).unwrap();
    assert_eq!(load_model(&path).unwrap(), model);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_csv(dir.path().join("absent.csv")).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.code(), "io");
    assert_eq!(load_model(dir.path().join("absent.bin")).unwrap_err().code(), "io");
}
