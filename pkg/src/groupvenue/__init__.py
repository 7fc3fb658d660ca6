"""Group event venue recommendation from member location traces."""
