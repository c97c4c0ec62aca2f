use std::io::{Cursor, Read, Write};

use cloudsplit_core::cost_model::CloudProfile;
use cloudsplit_core::scheduler::{JobId, Scheduler};
use cloudsplit_core::wire::{
    decode_tensor, decode_tensor_prefix, encode_tensor, read_frame, serve_job, ComputeMode, Dtype,
    ErrorMsg, Frame, IntermediateMsg, JobRequestMsg, MsgType, ServerConfig, TensorPayload,
    HEADER_LEN,
};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ELEMENTS: usize = 1 << 16;

fn random_tensor(rng: &mut ChaCha8Rng) -> TensorPayload {
    let dtype = if rng.random_bool(0.5) {
        Dtype::F32
    } else {
        Dtype::F16
    };
    let ndims = rng.random_range(0..=4);
    let mut dims: Vec<u32> = (0..ndims).map(|_| rng.random_range(0..=128)).collect();
    // Keep memory bounded by halving the largest dimension.
    while dims.iter().map(|&d| d as usize).product::<usize>() > MAX_ELEMENTS {
        let i = (0..dims.len()).max_by_key(|&i| dims[i]).unwrap();
        dims[i] /= 2;
    }
    let elements: usize = dims.iter().map(|&d| d as usize).product();
    let mut data = vec![0u8; elements * dtype.width()];
    rng.fill_bytes(&mut data);
    TensorPayload::new(dtype, dims, data).unwrap()
}

#[test]
fn codec_round_trip_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let t = random_tensor(&mut rng);
        let bytes = encode_tensor(&t);
        assert_eq!(bytes.len(), t.encoded_len());
        assert_eq!(bytes.len(), 2 + 4 * t.dims.len() + t.data.len());
        match decode_tensor(&bytes) {
            Ok(back) if back == t => {}
            _ => mismatches += 1,
        }
        if !bytes.is_empty() {
            let cut = rng.random_range(0..bytes.len());
            assert!(decode_tensor(&bytes[..cut]).is_err());
        }
    }
    assert_eq!(mismatches, 0);
}

#[test]
fn latents_data_section_is_64_kib() {
    let t = TensorPayload::from_f32(vec![4, 64, 64], &vec![0.5; 4 * 64 * 64]).unwrap();
    assert_eq!(t.data.len(), 65_536);
    assert_eq!(encode_tensor(&t).len(), 65_536 + 2 + 12);
}

fn mutate(rng: &mut ChaCha8Rng, mut bytes: Vec<u8>) -> Vec<u8> {
    match rng.random_range(0..4) {
        0 => {
            let n = rng.random_range(0..=bytes.len());
            bytes.truncate(n);
        }
        1 if !bytes.is_empty() => {
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..bytes.len());
                bytes[i] ^= 1 << rng.random_range(0..8);
            }
        }
        2 => {
            let extra = rng.random_range(1..32);
            bytes.extend((0..extra).map(|_| rng.random::<u8>()));
        }
        _ => {
            bytes = (0..rng.random_range(0..64)).map(|_| rng.random()).collect();
        }
    }
    bytes
}

fn valid_frames(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let job_id = JobId::from_u128(rng.random());
    let payload = match rng.random_range(0..3) {
        0 => JobRequestMsg {
            job_id,
            r_dev: rng.random_range(0.5..5.0),
            k_decode: 2.0,
            t_lim: rng.random_range(1.0..20.0),
            prompt: b"a photo".to_vec(),
        }
        .encode(),
        1 => IntermediateMsg {
            job_id,
            cloud_compute_s: 0.1,
            tensors: vec![random_tensor(rng)],
        }
        .encode(),
        _ => ErrorMsg {
            code: 4,
            message: "x".into(),
        }
        .encode(),
    };
    let msg_type = MsgType::try_from(rng.random_range(1..=6u8)).unwrap();
    Frame::new(msg_type, payload).encode()
}

#[test]
fn parsers_never_panic_on_garbage() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf022);
    for _ in 0..10_000 {
        let bytes = valid_frames(&mut rng);
        let bytes = mutate(&mut rng, bytes);

        if let Ok((frame, used)) = Frame::decode(&bytes) {
            assert_eq!(used, HEADER_LEN + frame.payload.len());
            assert!(used <= bytes.len());
        }
        let mut cursor = Cursor::new(&bytes);
        if let Ok(frame) = read_frame(&mut cursor) {
            // The reader consumes exactly one frame, never past its payload.
            assert_eq!(cursor.position() as usize, HEADER_LEN + frame.payload.len());
        }
        let body = bytes.get(HEADER_LEN.min(bytes.len())..).unwrap_or(&[]);
        let _ = JobRequestMsg::decode(body);
        let _ = IntermediateMsg::decode(body);
        let _ = ErrorMsg::decode(body);
        let _ = decode_tensor_prefix(body);
    }
}

/// In-memory connection: reads come from a fixed script, writes are captured.
struct Scripted {
    input: Cursor<Vec<u8>>,
    output: Vec<u8>,
}

impl Read for Scripted {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        self.input.read(buf)
    }
}

impl Write for Scripted {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.output.extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn server_answers_garbage_with_frames_not_panics() {
    let mut config = ServerConfig::new(CloudProfile::unbatched(62.5).unwrap());
    config.compute = ComputeMode::Disabled;
    let mut rng = ChaCha8Rng::seed_from_u64(0xbad);
    for _ in 0..2_000 {
        let scheduler = Scheduler::new(config.cloud.clone());
        let bytes = valid_frames(&mut rng);
        let bytes = mutate(&mut rng, bytes);
        let mut conn = Scripted {
            input: Cursor::new(bytes),
            output: Vec::new(),
        };
        let _ = serve_job(&mut conn, &scheduler, &config);
        // Whatever the server wrote must itself be well-formed frames.
        let mut out = conn.output.as_slice();
        while !out.is_empty() {
            let (_, used) = Frame::decode(out).expect("server emits valid frames");
            out = &out[used..];
        }
    }
}

#[test]
fn documented_accept_frame_bytes() {
    let accept = cloudsplit_core::wire::JobAcceptMsg {
        job_id: JobId::from_u128(1),
        n_final: 40,
        predicted_total_s: 7.5,
    };
    let frame = Frame::new(MsgType::JobAccept, accept.encode()).encode();
    let expected: Vec<u8> = [
        &b"SPLT"[..],
        &[0x01, 0x02, 0x00, 0x00, 0x1c, 0x00, 0x00, 0x00],
        &[0; 15],
        &[0x01],
        &[0x28, 0, 0, 0],
        &[0, 0, 0, 0, 0, 0, 0x1e, 0x40],
    ]
    .concat();
    assert_eq!(frame, expected);
}
