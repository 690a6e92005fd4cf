def pytest_configure(config):
    config.addinivalue_line("markers", "slow: multi-trial experiment tests")
