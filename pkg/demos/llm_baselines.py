"""The three LLM-only optimizers, driven by offline mock endpoints."""
from centaurhpo.llm import MockChatServer, HttpChatClient, LlmEndpointConfig, format_config_block, make_mock, oracle_config
from centaurhpo.space import nanochat_source, nanochat_space
from centaurhpo.study import SyntheticEvaluator, run_study
from centaurhpo.synthetic import OBJECTIVES

space = nanochat_space()
evaluator = SyntheticEvaluator(OBJECTIVES["sphere14"], space)

# Fixed-space agent: sees the best and most recent trials, answers with one config.
log = run_study("agent14", space, evaluator, budget_seconds=1e12, seed=0, max_trials=5, client=make_mock("oracle-sphere", space))
print("agent14:", [(r.proposal_source, round(r.objective, 4)) for r in log])

# LLAMBO scores random candidates; a dead endpoint falls back to a candidate chosen at random.
for variant in ("llambo_paper", "llambo_optuna"):
    log = run_study(variant, space, evaluator, budget_seconds=1e12, seed=0, max_trials=5, client=make_mock("always-fail", space))
    print(f"{variant}:", [r.proposal_source for r in log])

# The code agent edits the script itself; trials are keyed by source digest.
log = run_study("code_agent", space, evaluator, budget_seconds=1e12, seed=0, max_trials=3, client=make_mock("identity", space), base_source=nanochat_source())
print("code_agent digests:", [r.code_digest[:12] for r in log])

# The same agent over real HTTP, against a local server speaking the chat-completion format.
reply = format_config_block(oracle_config(space))
with MockChatServer(lambda i, body: f"Here you go.\n{reply}") as server:
    client = HttpChatClient(LlmEndpointConfig(base_url=server.base_url, model="local-test", retries=0))
    log = run_study("agent14", space, evaluator, budget_seconds=1e12, seed=0, max_trials=4, client=client)
    print("over HTTP:", len(server.requests), "requests, best", log.best().objective)
