use certgrid::crypto::{bundle_to_text, parse_bundle, verify_envelope, Role};
use certgrid::delegation::{concessions_of, phi, project, psi};
use certgrid::jdl::Jdl;
use certgrid::time::Window;
use proptest::prelude::*;

mod common;

fn job(args: &[String], inputs: &[String]) -> Jdl {
    let mut j = Jdl::from_entries([
        ("Executable", vec!["cat".to_string()]),
        ("Arguments", args.to_vec()),
        ("InputFile", inputs.to_vec()),
        ("Output", vec!["stdout".to_string()]),
        ("User", vec!["testuser".to_string()]),
        ("Broker", vec!["myVO".to_string()]),
    ])
    .unwrap();
    j.seal(false);
    j
}

fn values() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-zA-Z0-9/_.=-]{1,12}", 1..4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn valid_exactly_inside_every_window(
        args in values(),
        inputs in values(),
        nb in 1_300_000_000i64..1_400_000_000,
        user_len in 10i64..100_000,
        off in 0i64..5_000,
        run_len in 10i64..5_000,
        probe in -10_000i64..120_000,
    ) {
        let user = common::credential("testuser", Role::User);
        let broker = common::credential("myVO", Role::Broker);
        let trust = common::trust();
        let w1 = Window::new(nb, nb + user_len).unwrap();
        let w2 = Window::new(nb + off, nb + off + run_len).unwrap();
        let s1 = phi(&user, job(&args, &inputs), "myVO", w1).unwrap();
        let s2 = match psi(&broker, &s1, &[], "pilot", w2, &trust) {
            Ok(s2) => s2,
            Err(_) => {
                // Only a run window that escapes the user's may be refused.
                prop_assert!(!w2.within(&w1));
                return Ok(());
            }
        };
        prop_assert!(w2.within(&w1));

        let t = nb + probe;
        let expected = w1.contains(t) && w2.contains(t);
        prop_assert_eq!(verify_envelope(&s2, &trust, t).is_valid(), expected);
        prop_assert!(!verify_envelope(&s2, &trust, nb + user_len).is_valid());
    }

    #[test]
    fn wire_round_trip_keeps_signatures_and_concessions(args in values(), inputs in values()) {
        let user = common::credential("testuser", Role::User);
        let broker = common::credential("myVO", Role::Broker);
        let trust = common::trust();
        let w = Window::new(1_312_392_035, 1_313_601_635).unwrap();
        let s1 = phi(&user, job(&args, &inputs), "myVO", w).unwrap();
        let s2 = psi(&broker, &s1, &[], "pilot", w, &trust).unwrap();

        let back = parse_bundle(&bundle_to_text(&s2)).unwrap();
        prop_assert_eq!(back.digest(), s2.digest());
        prop_assert!(verify_envelope(&back, &trust, 1_312_400_000).is_valid());
        // Countersigning names the agent but grants nothing the user did not.
        prop_assert_eq!(project(&concessions_of(&back)), project(&concessions_of(&s1)));
    }
}
