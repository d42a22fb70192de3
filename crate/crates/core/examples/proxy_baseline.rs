//! The proxy-credential model for comparison: a proxy grants its whole
//! privilege set to whoever holds it, for any entity, and a credential
//! repository hands proxies to anyone with the retrieval key.
use certgrid::delegation::{gamma_pc, proxy_authorizes, MyProxy, Privilege, ProxyCredential};

fn main() {
    let t0 = 1_312_392_035;
    let pc = ProxyCredential::new(
        "alice",
        1,
        t0,
        t0 + 43_200,
        [Privilege::Read, Privilege::Write, Privilege::Execute],
    )
    .expect("non-empty lifetime");
    println!("grants at issue: {:?}", gamma_pc(&pc, t0));
    println!("grants at expiry: {:?}", gamma_pc(&pc, pc.t_expires));

    for (entity, agent) in [
        ("/grid/alice/out", Some("pilot-1")),
        ("/grid/bob/secret", Some("mallory")),
        ("/etc/anything", None),
    ] {
        let ok = proxy_authorizes(&pc, Privilege::Write, entity, agent, t0 + 60);
        println!("write {entity} as {agent:?}: {ok}");
    }

    let mut repo = MyProxy::new(7);
    let key = repo.store(pc, t0).expect("valid at storage");
    for who in ["the job's pilot", "a thief with the key"] {
        match repo.retrieve(&key, t0 + 100) {
            Ok(p) => println!("{who} gets a proxy for {} until {}", p.owner, p.t_expires),
            Err(e) => println!("{who}: {e}"),
        }
    }
    println!("retrievals: {}", repo.retrievals());
}
