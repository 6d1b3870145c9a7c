"""bidsforge: propose-and-revise conversion of raw neuroimaging uploads to BIDS."""

__version__ = "0.1.0"
