# Test Scenarios
