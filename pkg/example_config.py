# Copy to $VIRTUAL_ENV/rrpipe_config.py, /etc/rrpipe/rrpipe_config.py, or point
# RRPIPE_CONFIG at it. Provider keys belong in RRPIPE_API_KEY_<PROVIDER>
# environment variables, not here.
PRICE_TABLE = "/srv/rrpipe/prices.csv"
LOGFILE = "/var/log/rrpipe.log"
USAGE_LEDGER = "/srv/rrpipe/usage.jsonl"
MAX_IN_FLIGHT = 8
QUERY_CONCURRENCY = 4
MAX_RETRIES = 3
RETRY_BACKOFF = (1, 2, 4)
REQUEST_TIMEOUT = 120
