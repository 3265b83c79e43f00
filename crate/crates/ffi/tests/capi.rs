use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tempo_embed_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(te_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn generate_batch_train_evaluate_round_trip() {
    unsafe {
        let mut log = ptr::null_mut();
        assert_eq!(te_log_generate_type1(400, 0.6, 3, &mut log), TeStatus::Ok);
        let mut n = 0;
        assert_eq!(te_log_len(log, &mut n), TeStatus::Ok);
        assert_eq!(n, 400);

        let mut plan = ptr::null_mut();
        assert_eq!(te_plan_build(log, &mut plan), TeStatus::Ok);
        let mut batches = 0;
        assert_eq!(te_plan_num_batches(plan, &mut batches), TeStatus::Ok);
        let mut total = 0;
        let mut buf = [0usize; 8];
        for b in 0..batches {
            let mut size = 0;
            assert_eq!(te_plan_batch_size(plan, b, &mut size), TeStatus::Ok);
            let mut len = 0;
            assert_eq!(
                te_plan_batch(plan, b, buf.as_mut_ptr(), buf.len(), &mut len),
                TeStatus::Ok
            );
            assert_eq!(len, size);
            total += size;
        }
        assert_eq!(total, 400);
        let mut size = 0;
        assert_eq!(
            te_plan_batch_size(plan, batches, &mut size),
            TeStatus::InvalidArgument
        );
        assert!(last_error().contains("out of range"));

        let mut train = ptr::null_mut();
        let mut test = ptr::null_mut();
        assert_eq!(
            te_log_split(log, 16.0 / 17.0, &mut train, &mut test),
            TeStatus::Ok
        );
        let mut cfg = te_train_config_default();
        cfg.epochs = 1;
        cfg.dim = 8;
        cfg.loss = TeLoss::ItemSum;
        let mut ck = ptr::null_mut();
        assert_eq!(
            te_train(train, &cfg, &mut ck),
            TeStatus::Ok,
            "{}",
            last_error()
        );
        let (mut mrr, mut r10) = (0.0, 0.0);
        assert_eq!(te_evaluate(ck, test, &mut mrr, &mut r10), TeStatus::Ok);
        assert!(mrr > 0.0 && mrr <= 1.0);
        assert_eq!(r10, 1.0); // two items always fit in the top ten

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("ck.json").to_str().unwrap()).unwrap();
        assert_eq!(te_checkpoint_save(ck, path.as_ptr()), TeStatus::Ok);
        let mut loaded = ptr::null_mut();
        assert_eq!(te_checkpoint_load(path.as_ptr(), &mut loaded), TeStatus::Ok);
        let (mut mrr2, mut r102) = (0.0, 0.0);
        assert_eq!(
            te_evaluate(loaded, test, &mut mrr2, &mut r102),
            TeStatus::Ok
        );
        assert_eq!((mrr, r10), (mrr2, r102));

        te_checkpoint_free(loaded);
        te_checkpoint_free(ck);
        te_log_free(train);
        te_log_free(test);
        te_plan_free(plan);
        te_log_free(log);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut log = ptr::null_mut();
        assert_eq!(
            te_log_generate_type1(3, 0.5, 0, &mut log),
            TeStatus::InvalidArgument
        );
        assert!(log.is_null());
        assert!(last_error().contains("even"));
        assert_eq!(
            te_log_generate_type1(4, 0.5, 0, ptr::null_mut()),
            TeStatus::NullPointer
        );
        let mut n = 0;
        assert_eq!(te_log_len(ptr::null(), &mut n), TeStatus::NullPointer);

        let missing = CString::new("/nonexistent/log.csv").unwrap();
        assert_eq!(
            te_log_load_csv(missing.as_ptr(), true, &mut log),
            TeStatus::Io
        );

        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.csv");
        std::fs::write(
            &bad,
            "user_id,item_id,timestamp,state_label\nu,i,notanumber,0\n",
        )
        .unwrap();
        let bad = CString::new(bad.to_str().unwrap()).unwrap();
        assert_eq!(
            te_log_load_csv(bad.as_ptr(), true, &mut log),
            TeStatus::Parse
        );

        te_log_free(ptr::null_mut());
        te_plan_free(ptr::null_mut());
        te_checkpoint_free(ptr::null_mut());
    }
}

#[test]
fn header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"tempo_embed.h\"\n\
         int main(void) {\n\
           TeTrainConfig c = te_train_config_default();\n\
           TeLog *log = 0;\n\
           if (te_log_generate_type1(4, 0.5, 1, &log) != TE_STATUS_OK) return 1;\n\
           te_log_free(log);\n\
           return c.loss == TE_LOSS_TBATCH ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let Ok(status) = Command::new("cc")
        .args(["-std=c11", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&header)
        .arg(&src)
        .status()
    else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success());
}
