use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use striprf::gradcheck::random_tensor;
use striprf::io::{
    load_tensor_f32, load_weights, read_tensor, read_weights, write_tensor, write_weights,
    AnnotationDoc, AnyTensor,
};
use striprf::model::{build_model, ModelConfig};
use striprf::{ParamStore, Tensor};

fn small_store() -> ParamStore<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    ParamStore::from_entries([
        (
            "a.weight".to_string(),
            random_tensor(&mut rng, [2, 1, 3, 3], -1.0, 1.0, 0.0).cast(),
        ),
        (
            "a.bias".to_string(),
            random_tensor(&mut rng, [1, 2, 1, 1], -1.0, 1.0, 0.0).cast(),
        ),
        ("b".to_string(), Tensor::full([1, 1, 1, 1], 0.25)),
    ])
    .unwrap()
}

#[test]
fn tensor_header_bytes() {
    let t = Tensor::<f32>::from_fn([1, 2, 3, 4], |[_, c, y, x]| (c * 12 + y * 4 + x) as f32);
    let bytes = write_tensor(&t).unwrap();
    let mut header = b"SRFT".to_vec();
    header.extend([1, 0, 4]);
    for d in [1u32, 2, 3, 4] {
        header.extend(d.to_le_bytes());
    }
    assert_eq!(&bytes[..header.len()], &header[..]);
    assert_eq!(bytes.len(), header.len() + 24 * 4);
    assert_eq!(
        &bytes[header.len() + 4..header.len() + 8],
        &1.0f32.to_le_bytes()
    );

    let wide = write_tensor(&t.cast::<f64>()).unwrap();
    assert_eq!(wide[5], 1);
    assert_eq!(wide.len(), header.len() + 24 * 8);
    match read_tensor(&wide).unwrap() {
        AnyTensor::F64(back) => assert_eq!(back, t.cast::<f64>()),
        AnyTensor::F32(_) => panic!("dtype lost"),
    }
}

#[test]
fn weights_header_bytes() {
    let store =
        ParamStore::from_entries([("w".to_string(), Tensor::full([1, 1, 1, 2], 1.5f32))]).unwrap();
    let bytes = write_weights(&store).unwrap();
    let mut expected = b"SRFW".to_vec();
    expected.push(1);
    expected.extend(1u32.to_le_bytes());
    expected.extend(1u16.to_le_bytes());
    expected.push(b'w');
    expected.push(4);
    for d in [1u32, 1, 1, 2] {
        expected.extend(d.to_le_bytes());
    }
    expected.extend(1.5f32.to_le_bytes());
    expected.extend(1.5f32.to_le_bytes());
    assert_eq!(bytes, expected);
}

#[test]
fn every_truncation_is_rejected() {
    let t = random_tensor(
        &mut ChaCha8Rng::seed_from_u64(2),
        [1, 2, 3, 2],
        -1.0,
        1.0,
        0.0,
    );
    let tensor_bytes = write_tensor(&t).unwrap();
    for n in 0..tensor_bytes.len() {
        assert!(
            read_tensor(&tensor_bytes[..n]).is_err(),
            "tensor prefix {n}"
        );
    }
    let weight_bytes = write_weights(&small_store()).unwrap();
    for n in 0..weight_bytes.len() {
        assert!(
            read_weights(&weight_bytes[..n]).is_err(),
            "weights prefix {n}"
        );
    }
    for mut bytes in [tensor_bytes.clone(), weight_bytes.clone()] {
        bytes.push(0);
        assert!(read_tensor(&bytes).is_err() && read_weights(&bytes).is_err());
    }
}

#[test]
fn malformed_headers_are_rejected() {
    let bytes = write_tensor(&Tensor::<f32>::ones([1, 1, 2, 2])).unwrap();
    let patch = |at: usize, v: u8| {
        let mut b = bytes.clone();
        b[at] = v;
        b
    };
    assert!(read_tensor(&patch(0, b'X')).is_err());
    assert!(read_tensor(&patch(4, 2)).is_err());
    assert!(read_tensor(&patch(5, 7)).is_err());
    assert!(read_tensor(&patch(6, 3)).is_err());

    let store = ParamStore::from_entries([
        ("a".to_string(), Tensor::<f32>::ones([1, 1, 1, 1])),
        ("b".to_string(), Tensor::<f32>::ones([1, 1, 1, 1])),
    ])
    .unwrap();
    let mut bytes = write_weights(&store).unwrap();
    // rename "b" to "a": names must be strictly increasing
    let second = bytes.iter().rposition(|&c| c == b'b').unwrap();
    bytes[second] = b'a';
    assert!(read_weights(&bytes).is_err());
}

#[test]
fn round_trips_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_model(&ModelConfig::default()).unwrap();
    let store = model.init_params(4).unwrap();
    let bytes = write_weights(&store).unwrap();
    assert_eq!(write_weights(&store).unwrap(), bytes);
    let path = dir.path().join("w.srfw");
    std::fs::write(&path, &bytes).unwrap();
    let loaded = load_weights(&path).unwrap();
    assert_eq!(loaded, store);
    assert_eq!(write_weights(&loaded).unwrap(), bytes);

    let t: Tensor<f32> = random_tensor(
        &mut ChaCha8Rng::seed_from_u64(5),
        [2, 3, 4, 5],
        -1.0,
        1.0,
        0.0,
    )
    .cast();
    let bytes = write_tensor(&t).unwrap();
    let path = dir.path().join("t.srft");
    std::fs::write(&path, &bytes).unwrap();
    let back = load_tensor_f32(&path).unwrap();
    assert_eq!(back, t);
    assert_eq!(write_tensor(&back).unwrap(), bytes);
    assert!(load_tensor_f32(&dir.path().join("missing")).is_err());
}

#[test]
fn annotation_documents() {
    let text = r#"{"images":[{"id":3,"width":64,"height":48,"objects":[
        {"class_id":1,"bbox":[60,40,10,10]},{"class_id":0,"bbox":[1,2,3,4],"score":0.5}]}]}"#;
    let doc = AnnotationDoc::from_json(text).unwrap();
    assert_eq!(doc.class_names, ["D00", "D10", "D20", "D40"]);
    let gts = doc.ground_truths();
    assert_eq!((gts[0].bbox.w, gts[0].bbox.h), (4.0, 8.0));
    assert!(doc.detections().is_err());
    assert_eq!(AnnotationDoc::from_json(&doc.to_json()).unwrap(), doc);

    for bad in [
        r#"{"images":[{"id":1,"width":4,"height":4},{"id":1,"width":4,"height":4}]}"#,
        r#"{"images":[{"id":1,"width":4,"height":4,"objects":[{"class_id":9,"bbox":[0,0,1,1]}]}]}"#,
        r#"{"images":[{"id":1,"width":4,"height":4,"objects":[{"class_id":0,"bbox":[0,0,-1,1]}]}]}"#,
        r#"{"images":[],"extra":true}"#,
    ] {
        assert!(AnnotationDoc::from_json(bad).is_err(), "{bad}");
    }
    let other = AnnotationDoc {
        class_names: vec!["x".into()],
        images: vec![],
    };
    assert!(doc.check_same_classes(&other).is_err());
}
