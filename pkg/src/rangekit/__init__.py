"""rangekit: turn network-scan reports into a deployable virtual testbed.

The toolkit covers the full desk-scale pipeline: merging Nmap/OpenVAS scan
output into OS verdicts, building and validating a declarative testbed
configuration, emitting deployment / sniffer plans, scheduling randomized
benign-traffic jobs, and extracting labeled flow features from captures.
"""

__version__ = "0.1.0"
