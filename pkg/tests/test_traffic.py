from datetime import date, datetime, timezone
from random import Random

import pytest

from rangekit.traffic import (
    JobType,
    ProfileSyntaxError,
    SelectorKind,
    SshParams,
    TransferParams,
    UnresolvedSelectorError,
    WebParams,
    draw_job_params,
    load_profiles,
    mix_seed,
    render_agent_config,
    resolve_selector,
    resolve_servers,
    schedule_day,
    simulate_jobs,
)

DAY = date(2018, 7, 26)


def profile_doc(*rows: str) -> bytes:
    return ("\n".join(["type,start,end,freq,hosts,servers", *rows]) + "\n").encode()


def test_web_row_parses():
    [entry] = load_profiles(profile_doc("WEB,9:00,18:30,15,All,*"))
    assert entry.job_type is JobType.WEB
    assert entry.label == "WEB"
    assert (entry.start.hour, entry.start.minute) == (9, 0)
    assert (entry.end.hour, entry.end.minute) == (18, 30)
    assert entry.freq_minutes == 15
    assert entry.hosts.kind is SelectorKind.ALL
    assert entry.servers is None


def test_server_range_expansion():
    [entry] = load_profiles(profile_doc('SSH4,9:00,18:00,240,h2,"lsrv,ced1-3,int1-3"'))
    # hand enumeration of the ranges
    assert entry.servers == ("lsrv", "ced1", "ced2", "ced3", "int1", "int2", "int3")
    assert len(entry.servers) == 7
    assert entry.hosts == type(entry.hosts)(SelectorKind.EXPLICIT, ("h2",))


def test_all_but_selector():
    [entry] = load_profiles(profile_doc("SMB1,9:00,18:00,60,All-{h2},lsrv"))
    assert entry.hosts.kind is SelectorKind.ALL_BUT
    assert entry.hosts.names == ("h2",)


def test_start_after_end_rejected():
    with pytest.raises(ProfileSyntaxError):
        load_profiles(profile_doc("WEB,18:00,9:00,15,All,*"))


@pytest.mark.parametrize(
    "row",
    [
        "FTP,9:00,18:00,15,All,*",  # unknown type
        "WEB,9:00,18:30,zero,All,*",  # bad freq
        "WEB,9:00,18:30,-5,All,*",  # non-positive freq
        "WEB,junk,18:30,15,All,*",  # bad time
    ],
)
def test_bad_rows_rejected(row):
    with pytest.raises(ProfileSyntaxError):
        load_profiles(profile_doc(row))


def test_diag_profiles_reproduce_expected_table(diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    table = {(e.label): (e.start.strftime("%H:%M"), e.end.strftime("%H:%M"), e.freq_minutes) for e in entries}
    assert table["WEB"] == ("09:00", "18:30", 15)
    assert table["SMB1"] == ("09:00", "18:00", 60)
    assert table["SMB2"] == ("14:00", "18:00", 180)
    assert table["SFTP"] == ("09:00", "18:00", 240)
    assert {f"SSH{i}" for i in range(3, 8)} <= set(table)


# ---------------------------------------------------------------------------
# Selector resolution


def test_selectors_resolve_against_diag(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    by_label = {e.label: e for e in entries}
    smb1_hosts = {h.name for h in resolve_selector(by_label["SMB1"], diag_config)}
    assert "h2" not in smb1_hosts
    assert "h1" in smb1_hosts
    assert resolve_selector(by_label["SSH4"], diag_config)[0].name == "h2"
    agents = {h.name for h in diag_config.hosts if h.agent_profile}
    assert {h.name for h in resolve_selector(by_label["WEB"], diag_config)} == agents


def test_wildcard_servers_exclude_agents(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    web = next(e for e in entries if e.label == "WEB")
    servers = resolve_servers(web, diag_config)
    agents = {h.name for h in diag_config.hosts if h.agent_profile}
    assert servers
    assert not set(servers) & agents


def test_unknown_selector_token(diag_config):
    [entry] = load_profiles(profile_doc("SSH3,9:00,18:00,60,nosuch,ced2"))
    with pytest.raises(UnresolvedSelectorError):
        resolve_selector(entry, diag_config)


def test_unknown_server_token(diag_config):
    [entry] = load_profiles(profile_doc("SSH3,9:00,18:00,60,h1,nosuch"))
    with pytest.raises(UnresolvedSelectorError):
        resolve_servers(entry, diag_config)


# ---------------------------------------------------------------------------
# Scheduling


def test_schedule_deterministic(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    first = schedule_day(entries, diag_config, DAY, 42)
    second = schedule_day(entries, diag_config, DAY, 42)
    assert first == second
    different = schedule_day(entries, diag_config, DAY, 43)
    assert different != first


def test_schedule_sorted_and_window_contained(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    by_label = {e.label: e for e in entries}
    jobs = schedule_day(entries, diag_config, DAY, 7)
    assert jobs == sorted(jobs, key=lambda j: (j.start_ts, j.host, j.label, j.job_id))
    for job in jobs:
        entry = by_label[job.label]
        tod = datetime.fromtimestamp(job.start_ts / 1e6, tz=timezone.utc).time()
        assert entry.start <= tod <= entry.end


def test_first_job_fires_at_window_start(diag_config):
    [entry] = load_profiles(profile_doc("SSH3,9:00,9:05,60,h1,ced2"))
    jobs = schedule_day([entry], diag_config, DAY, 3)
    # window shorter than half the mean gap: exactly one job, at the start
    assert len(jobs) == 1
    tod = datetime.fromtimestamp(jobs[0].start_ts / 1e6, tz=timezone.utc).time()
    assert (tod.hour, tod.minute, tod.second) == (9, 0, 0)


def test_schedule_independent_of_entry_order(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    jobs_fwd = schedule_day(entries, diag_config, DAY, 11)
    jobs_rev = schedule_day(list(reversed(entries)), diag_config, DAY, 11)
    assert jobs_fwd == jobs_rev


# ---------------------------------------------------------------------------
# Parameter draws


def test_web_params_bounds():
    for seed in range(2000):
        params = draw_job_params(JobType.WEB, seed)
        assert isinstance(params, WebParams)
        assert 1 <= params.n_requests <= 20
        assert params.click_depth_limit == 7
        assert len(params.waits) == params.n_requests
        assert all(5.0 <= w <= 10.0 for w in params.waits)


def test_web_request_count_mean_matches_uniform():
    n = 10_000
    total = sum(draw_job_params(JobType.WEB, seed).n_requests for seed in range(n))
    assert total / n == pytest.approx(10.5, abs=0.2)


def test_web_user_agent_tracks_family():
    linux = draw_job_params(JobType.WEB, 5, os_family="Linux")
    windows = draw_job_params(JobType.WEB, 5, os_family="Windows")
    assert "Linux" in linux.user_agent
    assert "Windows" in windows.user_agent


def test_smb_sizes_are_8192_multiples():
    for seed in range(2000):
        params = draw_job_params(JobType.SMB, seed)
        assert isinstance(params, TransferParams)
        assert params.base_size == 8192
        assert params.sizes
        assert all(size > 0 and size % 8192 == 0 for size in params.sizes)


def test_ssh_params():
    for seed in range(500):
        params = draw_job_params(JobType.SSH, seed)
        assert isinstance(params, SshParams)
        assert 30.0 <= params.session_seconds <= 600.0
        assert len(params.commands) == params.n_commands
    pool_hits = {c for s in range(200) for c in draw_job_params(JobType.SSH, s).commands}
    assert {"ls", "cd", "cat /var/log/messages"} <= pool_hits


def test_draw_deterministic():
    assert draw_job_params(JobType.WEB, 99) == draw_job_params(JobType.WEB, 99)
    assert mix_seed(1, "a", "b") == mix_seed(1, "a", "b")
    assert mix_seed(1, "a", "b") != mix_seed(1, "a", "c")


# ---------------------------------------------------------------------------
# Simulation


def _one_job(diag_config, row, seed=5):
    [entry] = load_profiles(profile_doc(row))
    jobs = schedule_day([entry], diag_config, DAY, seed)
    return jobs[0]


def test_ssh_job_yields_single_flow_spanning_session(diag_config):
    job = _one_job(diag_config, "SSH3,9:00,9:05,60,h1,ced2")
    log = simulate_jobs([job], diag_config, 5)
    assert len(log.flows) == 1
    flow = log.flows[0].flow
    assert flow.key.dst_port == 22
    assert flow.duration_s == pytest.approx(job.params.session_seconds, abs=1e-6)


def test_web_job_one_flow_per_request(diag_config):
    for seed in range(50):
        job = _one_job(diag_config, "WEB,9:00,9:05,15,h1,www", seed=seed)
        log = simulate_jobs([job], diag_config, seed)
        assert len(log.flows) == job.params.n_requests
        assert all(jf.flow.key.dst_port in (80, 443) for jf in log.flows)


def test_smb_flows_carry_requested_bytes(diag_config):
    job = _one_job(diag_config, "SMB1,9:00,9:05,60,h1,lsrv")
    log = simulate_jobs([job], diag_config, 5)
    assert len(log.flows) == job.params.n_files
    assert all(jf.flow.key.dst_port == 445 for jf in log.flows)
    total = sum(jf.flow.total_bytes for jf in log.flows)
    assert total >= sum(job.params.sizes)


def test_flow_endpoints_match_job_endpoints(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    jobs = schedule_day(entries, diag_config, DAY, 21)
    rng = Random(0)
    sample = rng.sample(jobs, 60)
    log = simulate_jobs(sample, diag_config, 21)
    host_ip = {h.name: str(h.nics[0].ip) for h in diag_config.hosts}
    for jf in log.flows:
        assert jf.flow.key.src_ip == host_ip[jf.host]
        assert jf.flow.key.dst_ip == host_ip[jf.server]


def test_full_day_endpoints_respect_profile_table(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    jobs = schedule_day(entries, diag_config, DAY, 2)
    log = simulate_jobs(jobs, diag_config, 2)
    # audit endpoint pairs against the profile table
    allowed: dict[str, set[tuple[str, str]]] = {}
    for entry in entries:
        hosts = {h.name for h in resolve_selector(entry, diag_config)}
        servers = set(resolve_servers(entry, diag_config))
        allowed[entry.label] = {(h, s) for h in hosts for s in servers}
    for jf in log.flows:
        label = jf.job_id.split("-")[0]
        assert (jf.host, jf.server) in allowed[label], jf.job_id


def test_simulation_deterministic(diag_config):
    job = _one_job(diag_config, "SFTP,9:00,9:05,240,h1,int3")
    assert simulate_jobs([job], diag_config, 9) == simulate_jobs([job], diag_config, 9)
    assert simulate_jobs([job], diag_config, 9) != simulate_jobs([job], diag_config, 10)


# ---------------------------------------------------------------------------
# Agent configs


def test_agent_config_exclusion(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    hosts = diag_config.host_map()
    h2_doc = render_agent_config(hosts["h2"], entries)
    assert '"SSH4"' in h2_doc
    assert '"SMB1"' not in h2_doc and '"SMB2"' not in h2_doc and '"SFTP"' not in h2_doc
    h1_doc = render_agent_config(hosts["h1"], entries)
    assert '"SMB1"' in h1_doc and '"SSH3"' in h1_doc


def test_agent_config_unmatched_host(diag_config, diag_paths):
    entries = load_profiles(diag_paths["profiles"].read_bytes())
    doc = render_agent_config(diag_config.host_map()["atk1"], entries)
    assert '"jobs": []' in doc


def test_agent_config_web_only_keeps_wildcard(diag_config):
    entries = load_profiles(profile_doc("WEB,9:00,18:30,15,All,*"))
    doc = render_agent_config(diag_config.host_map()["h1"], entries)
    assert '"servers": "*"' in doc
    assert render_agent_config(diag_config.host_map()["h1"], entries) == doc
