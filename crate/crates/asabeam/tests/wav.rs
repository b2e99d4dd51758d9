use asabeam::error::AppError;
use asabeam::wav::{quantize_f32, read_wav, write_wav};
use asabeam_core::dsp::AudioBuffer;

#[test]
fn float_round_trip_is_exact_after_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.wav");
    let audio = AudioBuffer::new(16000, vec![vec![0.1, -0.25, 0.3333], vec![1e-7, 0.5, -1.0]]).unwrap();
    write_wav(&path, &audio).unwrap();
    let back = read_wav(&path).unwrap();
    assert_eq!(back, quantize_f32(&audio));
    assert_eq!(back.sample_rate(), 16000);
}

#[test]
fn pcm16_input_is_scaled_to_unit_range() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pcm.wav");
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: 8000,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    for v in [16384i16, -32768, 0, 32767] {
        w.write_sample(v).unwrap();
    }
    w.finalize().unwrap();
    let a = read_wav(&path).unwrap();
    assert_eq!(a.channel(0), &[0.5, 0.0]);
    assert_eq!(a.channel(1), &[-1.0, 32767.0 / 32768.0]);
}

#[test]
fn unsupported_and_missing_files_are_io_or_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("u8.wav");
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: 8000,
        bits_per_sample: 8,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(&path, spec).unwrap();
    w.write_sample(3i8).unwrap();
    w.finalize().unwrap();
    let e = read_wav(&path).unwrap_err();
    assert!(matches!(e, AppError::Format { .. }), "{}", e);
    assert_eq!(e.exit_code(), 3);
    let e = read_wav(dir.path().join("absent.wav")).unwrap_err();
    assert!(matches!(e, AppError::Io { .. }));
    std::fs::write(dir.path().join("junk.wav"), b"not a wav file").unwrap();
    assert_eq!(read_wav(dir.path().join("junk.wav")).unwrap_err().exit_code(), 3);
}
