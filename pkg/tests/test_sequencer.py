from arma.config import MS, Config
from arma.consenter import PortSubmit, Round, RoundPull
from arma.model import BatchAttestationShare, BatchId, ComplaintVote
from arma.sequencer import Sequencer
from arma.transport import Address, Recorder, consenter_addr


def share(seq, signer, epoch=0):
    return BatchAttestationShare(BatchId(0, 0, 0, seq), bytes([seq]) * 32, signer, epoch)


def test_rounds_are_identical_for_all_members_and_capped():
    cfg = Config(n_parties=4, f=1, round_cap=3, sig_scheme="hmac")
    out = Recorder()
    seq = Sequencer(cfg, out)
    seq.submit([share(i, 0) for i in range(5)], 0)
    seq.tick(0)
    seq.tick(5 * MS)                       # interval not elapsed
    seq.tick(cfg.round_interval)
    rounds = [m for _, _, m in out.sent]
    assert len(rounds) == 8
    first = [m for _, d, m in out.sent if d == consenter_addr(0)]
    assert [len(r.payloads) for r in first] == [3, 2]
    assert all(m == first[0] for _, _, m in out.sent[:4])


def test_deduplicates_identities_and_stamps_epochs():
    cfg = Config(n_parties=4, f=1, sig_scheme="hmac")
    seq = Sequencer(cfg, Recorder())
    assert seq.submit([share(1, 0), share(1, 0), ComplaintVote(0, 0, 1), ComplaintVote(0, 0, 1)], 0) == 2
    assert seq.submit([share(1, 0, epoch=1)], 0) == 1
    rnd = seq.cut(cfg.epoch_length * 3)
    assert isinstance(rnd, Round) and rnd.epoch == 3 and rnd.number == 0


def test_round_pull_serves_history():
    cfg = Config(n_parties=4, f=1, sig_scheme="hmac")
    out = Recorder()
    seq = Sequencer(cfg, out)
    for i in range(4):
        seq.on_message(consenter_addr(0), PortSubmit((share(i, 1),)), 0)
        seq.cut(i)
    out.sent.clear()
    who = consenter_addr(2)
    seq.on_message(who, RoundPull(1), 10)
    assert [m.number for _, d, m in out.sent if d == who] == [1, 2, 3]
