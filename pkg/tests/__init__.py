# Tests for the droplet control toolkit
