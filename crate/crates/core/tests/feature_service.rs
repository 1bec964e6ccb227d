use std::net::{SocketAddr, TcpListener, TcpStream};
use std::thread;

use boxrl::env::{EnvConfig, EnvMode, Environment};
use boxrl::feature_client::{
    encode_error, encode_handshake_reply, read_frame, write_frame, ExternalExtractor, FeatureRequest,
    FeatureResponse, FrameType,
};
use boxrl::features::{BackboneDescriptor, FeatureError, FeatureExtractor, HISTORY_DIM};
use boxrl::geometry::{Action, BoundingBox};
use image::{Rgb, RgbImage};

#[derive(Clone, Copy)]
enum Fault {
    None,
    WrongDim,
    NonFinite,
    WrongId,
    ErrorFrame,
}

/// Deterministic stand-in for a CNN: feature `i` mixes the mean channel
/// values of the crop with its size.
fn fake_features(req: &FeatureRequest, dim: usize) -> Vec<f32> {
    let n = (req.width * req.height) as f32;
    let mut mean = [0f32; 3];
    for px in req.pixels.chunks(3) {
        for c in 0..3 {
            mean[c] += f32::from(px[c]) / n;
        }
    }
    (0..dim)
        .map(|i| {
            let c = mean[i % 3] / 255.0;
            c * ((i as f32) * 0.01).cos() + (req.width as f32) / 1000.0
        })
        .collect()
}

fn serve(stream: TcpStream, dim: usize, fault: Fault) {
    let mut reader = stream.try_clone().unwrap();
    let mut writer = stream;
    let backbone = BackboneDescriptor {
        name: format!("mock-{dim}"),
        dim,
    };
    while let Ok(frame) = read_frame(&mut reader) {
        match frame.kind {
            FrameType::Handshake => {
                write_frame(&mut writer, FrameType::Handshake, &encode_handshake_reply(&backbone)).unwrap();
            }
            FrameType::FeatureRequest | FrameType::ClassifyRequest => {
                let req = FeatureRequest::decode(&frame.payload).unwrap();
                if let Fault::ErrorFrame = fault {
                    write_frame(&mut writer, FrameType::Error, &encode_error(7, "model exploded")).unwrap();
                    continue;
                }
                let mut features = fake_features(&req, dim);
                let mut id = req.id;
                match fault {
                    Fault::WrongDim => {
                        features.pop();
                    }
                    Fault::NonFinite => features[3] = f32::NAN,
                    Fault::WrongId => id += 100,
                    _ => {}
                }
                let label = (frame.kind == FrameType::ClassifyRequest).then(|| ("block".to_string(), 0.75));
                let resp = FeatureResponse { id, features, label };
                write_frame(&mut writer, FrameType::FeatureResponse, &resp.encode()).unwrap();
            }
            _ => {
                write_frame(&mut writer, FrameType::Error, &encode_error(1, "unexpected frame")).unwrap();
            }
        }
    }
}

/// Serves connections on an ephemeral port until the test process exits.
fn mock_server(dim: usize, fault: Fault) -> SocketAddr {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            thread::spawn(move || serve(stream, dim, fault));
        }
    });
    addr
}

fn test_image() -> RgbImage {
    RgbImage::from_fn(96, 80, |x, y| Rgb([(x * 2) as u8, (y * 3) as u8, 128]))
}

#[test]
fn handshake_reports_backbone_for_each_width() {
    for dim in [512, 1280, 2048] {
        let addr = mock_server(dim, Fault::None);
        let mut ext = ExternalExtractor::connect(addr, Some(dim)).unwrap();
        assert_eq!(ext.descriptor().dim, dim);
        assert_eq!(ext.descriptor().name, format!("mock-{dim}"));
        assert_eq!(ext.descriptor().state_dim(), dim + HISTORY_DIM);

        let img = test_image();
        let region = BoundingBox::new(10.0, 5.0, 50.0, 45.0).unwrap();
        let v = ext.extract(&img, &region).unwrap();
        assert_eq!(v.dim(), dim);
        // the server saw exactly the 40x40 crop
        let crop = image::imageops::crop_imm(&img, 10, 5, 40, 40).to_image();
        let expected = fake_features(
            &FeatureRequest {
                id: 0,
                width: 40,
                height: 40,
                pixels: crop.into_raw(),
            },
            dim,
        );
        assert_eq!(v.0, expected);
    }
}

#[test]
fn environment_runs_on_external_features() {
    for dim in [512, 1280, 2048] {
        let addr = mock_server(dim, Fault::None);
        let ext = ExternalExtractor::connect(addr, None).unwrap();
        let mut env = Environment::new(EnvConfig::default(), ext).unwrap();
        assert_eq!(env.state_dim(), dim + HISTORY_DIM);
        let img = test_image();
        let gt = [BoundingBox::new(20.0, 20.0, 60.0, 60.0).unwrap()];
        let (mut ep, s0) = env.reset(&img, &gt, EnvMode::Train).unwrap();
        assert_eq!(s0.len(), dim + HISTORY_DIM);
        let out = env.step(&mut ep, Action::Smaller).unwrap();
        assert_eq!(out.state.len(), dim + HISTORY_DIM);
        let newest = dim + HISTORY_DIM - Action::COUNT;
        assert_eq!(out.state.as_slice()[newest + Action::Smaller.index()], 1.0);
    }
}

#[test]
fn classify_returns_label() {
    let addr = mock_server(512, Fault::None);
    let mut ext = ExternalExtractor::connect(addr, None).unwrap();
    let region = BoundingBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
    let (v, label) = ext.classify(&test_image(), &region).unwrap();
    assert_eq!(v.dim(), 512);
    assert_eq!(label, Some(("block".to_string(), 0.75)));
}

#[test]
fn announced_width_must_match_expectation() {
    let addr = mock_server(1280, Fault::None);
    let err = ExternalExtractor::connect(addr, Some(512)).unwrap_err();
    assert!(matches!(err, FeatureError::DimensionMismatch { expected: 512, actual: 1280 }), "{err}");
}

#[test]
fn malformed_responses_are_rejected() {
    let region = BoundingBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
    let img = test_image();

    let mut ext = ExternalExtractor::connect(mock_server(512, Fault::WrongDim), None).unwrap();
    let err = ext.extract(&img, &region).unwrap_err();
    assert!(matches!(err, FeatureError::DimensionMismatch { expected: 512, actual: 511 }), "{err}");

    let mut ext = ExternalExtractor::connect(mock_server(512, Fault::NonFinite), None).unwrap();
    assert!(matches!(ext.extract(&img, &region), Err(FeatureError::Protocol(_))));

    let mut ext = ExternalExtractor::connect(mock_server(512, Fault::WrongId), None).unwrap();
    assert!(matches!(ext.extract(&img, &region), Err(FeatureError::Protocol(_))));
}

#[test]
fn error_frames_surface_code_and_message() {
    let mut ext = ExternalExtractor::connect(mock_server(2048, Fault::ErrorFrame), None).unwrap();
    let region = BoundingBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
    match ext.extract(&test_image(), &region) {
        Err(FeatureError::Remote { code, message }) => {
            assert_eq!(code, 7);
            assert_eq!(message, "model exploded");
        }
        other => panic!("expected remote error, got {other:?}"),
    }
}

#[test]
fn unreachable_service_is_unavailable() {
    // bind then drop to get a port with nothing listening
    let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
    assert!(matches!(
        ExternalExtractor::connect(addr, None),
        Err(FeatureError::ServiceUnavailable(_))
    ));
}

#[test]
fn service_dropping_mid_session_is_unavailable() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut reader = stream.try_clone().unwrap();
        let mut writer = stream;
        read_frame(&mut reader).unwrap();
        let backbone = BackboneDescriptor {
            name: "flaky".into(),
            dim: 512,
        };
        write_frame(&mut writer, FrameType::Handshake, &encode_handshake_reply(&backbone)).unwrap();
        // hang up before the first request is answered
    });
    let mut ext = ExternalExtractor::connect(addr, None).unwrap();
    let region = BoundingBox::new(0.0, 0.0, 32.0, 32.0).unwrap();
    assert!(matches!(
        ext.extract(&test_image(), &region),
        Err(FeatureError::ServiceUnavailable(_))
    ));
}
